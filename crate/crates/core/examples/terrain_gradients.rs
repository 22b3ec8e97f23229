//! Heights and slopes of the default bump field, checked against central
//! differences, then sampled onto a grid and re-read through the bicubic
//! interpolant.
//!
//! cargo run --example terrain_gradients

use dualnav::terrain::{format_grid, parse_grid, sample_grid, Bounds, TerrainMap};
use dualnav::scenario::default_terrain;

fn main() -> dualnav::Result<()> {
    let map = default_terrain();
    let h = 1e-3;
    println!("{:>8} {:>8} {:>9} {:>10} {:>10} {:>10}", "x1", "x2", "height", "dh/dx1", "dh/dx2", "fd err");
    for (x1, x2) in [(0.0, 0.0), (400.0, 450.0), (900.0, 620.0), (1500.0, 700.0), (1800.0, 300.0)] {
        let (z, g1, g2) = map.height_and_gradient(x1, x2)?;
        let fd1 = (map.height_at(x1 + h, x2)? - map.height_at(x1 - h, x2)?) / (2.0 * h);
        let fd2 = (map.height_at(x1, x2 + h)? - map.height_at(x1, x2 - h)?) / (2.0 * h);
        let err = (g1 - fd1).abs().max((g2 - fd2).abs());
        println!("{x1:>8.1} {x2:>8.1} {z:>9.3} {g1:>10.5} {g2:>10.5} {err:>10.2e}");
    }

    let bounds = Bounds::new(-200.0, 2200.0, -200.0, 1000.0);
    let grid = sample_grid(&map, bounds, 20.0)?;
    let reread: TerrainMap = parse_grid(&format_grid(&grid))?.into();
    let (nx, ny) = grid.shape();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let x1 = -190.0 + 11.9 * i as f64;
        let x2 = -190.0 + 5.9 * i as f64;
        worst = worst.max((reread.height_at(x1, x2)? - map.height_at(x1, x2)?).abs());
    }
    println!("grid {nx}x{ny} at 20 m: worst off-node height error {worst:.3} m");
    Ok(())
}
