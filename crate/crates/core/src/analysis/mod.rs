//! Score statistics, the attention-consistency study and Monte Carlo
//! checks of the sampling and projection bounds.

mod consistency;
mod report;
mod scores;
mod stats;
#[cfg(test)]
mod tests;
mod theory;

pub use consistency::{
    compare_runs, consistency_study, Cell, ConsistencyConfig, ConsistencyReport,
};
pub use report::{num, Table};
pub use scores::{
    attention_entropy, edge_type_attribution, edge_type_names, inter_layer_distances,
    node_type_masses, row_topk_mass, topk_mass, EdgeTypeMass, TopKStats,
};
pub use stats::{energy_distance, entropy, median, quantile, slope};
pub use theory::{
    jlt_compress_check, jlt_deviation, noisy_sampling_check, random_unit_rows, sign_projection,
    spectral_norm, spectral_sample_check, underestimate_ratio, SampleCheck, SparseMatrix,
};
