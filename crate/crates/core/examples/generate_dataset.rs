//! Generate a small dataset, write it to disk and re-verify every label.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use promobench::synthgen::{generate_to_dir, load_dataset_dir, mislabeled_rows, GenSpec};

fn main() -> promobench::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("promobench-generate"));

    let spec = GenSpec::with_sizes(20_000, 50, 10, 7);
    let summary = generate_to_dir(&spec, &out)?;
    println!("wrote {} rows to {}", summary.rows, out.display());
    println!("rows per customer: {}..{}", summary.customer_min, summary.customer_max);
    for (i, n) in summary.label_histogram.iter().enumerate() {
        println!("offer {:>2}: {n}", i + 1);
    }

    let (spec_back, ds) = load_dataset_dir(&out)?;
    assert_eq!(spec_back, spec);
    let bad = mislabeled_rows(&ds.rows, spec.n_offers);
    println!("mislabeled rows after reload: {}", bad.len());

    let first = &ds.rows[0];
    println!(
        "row 0: customer {} campaign {} offer {}",
        first.user_id, first.campaign_id, first.offer
    );
    Ok(())
}
