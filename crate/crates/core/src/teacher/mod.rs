//! Teacher forecasts: binary prediction files from any external model, a
//! synthetic oracle, and instruction-prompt export for language-model
//! teachers.

mod file;
mod oracle;
mod prompts;

pub use file::{dataset_fingerprint, load_predictions, TeacherDims, TeacherPredictions};
pub use oracle::{oracle_teacher, series_std, OracleConfig};
pub use prompts::{export_instruction_prompts, render_prompt, RegionInfo};
