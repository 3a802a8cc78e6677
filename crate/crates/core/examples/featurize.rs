//! Hashed word and character n-gram features.
//!
//!     cargo run --example featurize -- "Some headline text"

use framecl::data::{featurize, fnv1a64};

fn main() {
    let text = std::env::args().nth(1).unwrap_or_else(|| "Parliament debates the budget".into());
    let v = featurize(&text, 1 << 14);
    println!("{} non-zero buckets out of {}", v.nnz(), 1 << 14);
    for (i, x) in v.indices.iter().zip(&v.values).take(8) {
        println!("  bucket {i:>5}  {x:.4}");
    }
    println!("fnv1a64(\"w:abc\") = {:016x}", fnv1a64(b"w:abc"));
}
