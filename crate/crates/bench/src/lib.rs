//! Fixtures shared by the benchmarks.

use hybridimp_core::denoiser::DenoiserConfig;
use hybridimp_core::imputer::train;
use hybridimp_core::missingness::gen_mcar;
use hybridimp_core::synth::{generate_dataset, SynthConfig};
use hybridimp_core::{Checkpoint, MaskedTable, TrainConfig};

/// Synthetic table of `n` rows with a 30% MCAR mask applied.
pub fn masked_synthetic(n: usize, seed: u64) -> MaskedTable {
    let config = SynthConfig { n, seed, ..SynthConfig::default() };
    let truth = generate_dataset(&config).expect("valid synthetic config").0;
    let mask = gen_mcar(truth.n_rows(), truth.n_cols(), 0.3, seed + 1).expect("valid rate");
    truth.with_mask(&mask).expect("mask matches table")
}

/// Briefly trained checkpoint with `T = 100`, enough to time sampling.
pub fn checkpoint(table: &MaskedTable) -> Checkpoint {
    let config = TrainConfig {
        epochs: 2,
        batch_size: 32,
        lr: 1e-3,
        denoiser: DenoiserConfig { hidden: 128, depth: 1, time_dim: 32 },
        ..TrainConfig::default()
    };
    train(table, &config).expect("training succeeds")
}
