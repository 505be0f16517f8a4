pub mod bias_stats;
pub mod encoder;
pub mod evaluator;
pub mod loss;
pub mod model;
pub mod ndgrad;
pub mod output_layer;
pub mod params;
pub mod synth_data;
pub mod trainer;
pub mod types;
