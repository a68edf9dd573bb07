pub mod flops;
pub mod records;

pub use flops::{count_attention_flops, density, gate_precision_recall, FlopsReport};
pub use records::{
    read_json_lines, write_html_heatmap, write_json_lines, write_metrics, AttentionRecord,
};
