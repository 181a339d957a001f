//! Shared inputs for the pipeline benchmarks.

use tablegraph_core::data::{examples, synth_generate, SynthConfig};
use tablegraph_core::doc::Page;
use tablegraph_core::network::Example;

/// First pages of `documents` synthetic invoices with the default layout.
pub fn pages(documents: usize, seed: u64) -> Vec<Page> {
    synth_generate(&config(documents, seed))
        .expect("default synthetic layout fits")
        .iter()
        .map(|r| r.pages[0].to_page().expect("synthetic pages are valid"))
        .collect()
}

/// Labeled network inputs for the same documents.
pub fn labeled(documents: usize, seed: u64, n_neighbors: usize) -> Vec<Example> {
    let cfg = config(documents, seed);
    let records = synth_generate(&cfg).expect("default synthetic layout fits");
    let schema = cfg.schema().expect("default schema is valid");
    examples(&records, &schema, n_neighbors).expect("synthetic pages are valid")
}

fn config(documents: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        documents,
        families: documents.min(3),
        seed,
        ..SynthConfig::default()
    }
}
