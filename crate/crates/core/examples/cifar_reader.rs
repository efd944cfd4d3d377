//! Writes a small CIFAR-format binary file, reads it back, and shows the
//! error for a truncated file.
//!
//! Pass a real batch file to inspect it instead:
//! cargo run --release --example cifar_reader -- data_batch_1.bin

use cfflab::data::{load_cifar_binary, make_synthetic_blobs, parse_cifar_bytes, write_cifar_binary, Split, CIFAR_RECORD_BYTES};
use cfflab::Result;

fn main() -> Result<()> {
    if let Some(path) = std::env::args().nth(1) {
        let d = load_cifar_binary(path.as_ref(), 10, Split::Train)?;
        let mut counts = [0usize; 10];
        d.labels.iter().for_each(|&l| counts[l] += 1);
        println!("{} images of shape {:?}; per-class counts {counts:?}", d.len(), &d.images.shape()[1..]);
        return Ok(());
    }
    // 32×32 synthetic images quantise cleanly to bytes
    let src = make_synthetic_blobs(10, 2, 32, 0.0, 1)?;
    let dir = std::env::temp_dir().join("cfflab-cifar-demo");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("demo_batch.bin");
    write_cifar_binary(&path, &src)?;
    let back = load_cifar_binary(&path, 10, Split::Train)?;
    let max_err = src.images.max_abs_diff(&back.images);
    println!("wrote {} records ({} bytes each); labels equal: {}; max pixel error {max_err:.4}", back.len(), CIFAR_RECORD_BYTES, back.labels == src.labels);

    let mut bytes = std::fs::read(&path).expect("just written");
    bytes.truncate(bytes.len() - 100);
    match parse_cifar_bytes(&bytes, 10, Split::Train) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly parsed"),
    }
    Ok(())
}
