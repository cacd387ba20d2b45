use std::collections::HashSet;
use std::time::Instant;

use dlml::dl::{bfs_distances, rel_position, DLVertex};

fn main() {
    for (q, r) in [(2u8, 3u8), (2, 2)] {
        let o = DLVertex::origin(q, r);
        for radius in [6u64, 8, 10, 12] {
            let t = Instant::now();
            let d = bfs_distances(&o, radius);
            println!(
                "DL({q},{r}) ball radius {radius}: {} vertices in {:?}",
                d.len(),
                t.elapsed()
            );
            if radius == 6 {
                let verts: Vec<_> = d.keys().cloned().collect();
                let t = Instant::now();
                let mut rels = HashSet::new();
                let mut pairs = 0u64;
                for x in &verts {
                    for y in &verts {
                        let rel = rel_position(x, y).unwrap();
                        rels.insert(rel);
                        pairs += 1;
                    }
                }
                println!(
                    "  pairs {} distinct rels {} in {:?}",
                    pairs,
                    rels.len(),
                    t.elapsed()
                );
            }
            if radius == 12 && r == 3 {
                break;
            }
        }
    }
}
