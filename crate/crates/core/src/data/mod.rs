//! Expression matrices: loading, preprocessing and synthetic generation.

mod expression;
mod preprocess;
mod synth;

pub use expression::{load_expression, save_expression, sidecar, ExpressionFormat, ExpressionMatrix, MTX_HEADER};
pub use preprocess::{preprocess, project, PreprocessConfig, Preprocessed};
pub use synth::{synthesize, LR_UPREGULATION, SYNTH_DISPERSION};
