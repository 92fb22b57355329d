//! Round trip of a vector field through the binary field format, plus a CSV slice.

use plaplab::catalog::random_sine_series;
use plaplab::fields::{io, Grid};

fn main() -> plaplab::Result<()> {
    let grid = Grid::cube(3, 9, 0.0, 1.0)?;
    let w = random_sine_series(&grid, 2, 3, 42);
    let dir = std::env::temp_dir().join("plaplab-field-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("w.plf");
    io::write(&path, &w)?;
    let back = io::read(&path)?;
    assert_eq!(back.values(), w.values());
    println!("wrote and reread {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let mut csv = Vec::new();
    io::write_slice_csv(&mut csv, &w, 2, 4)?;
    let text = String::from_utf8_lossy(&csv);
    for line in text.lines().take(4) {
        println!("{line}");
    }
    println!("... {} rows in the z = 0.5 slice", text.lines().count() - 1);
    Ok(())
}
