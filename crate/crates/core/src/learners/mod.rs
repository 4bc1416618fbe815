//! Model fits used by the selection pipeline: a LASSO regularization path
//! for entry-value statistics, bagged regression trees for impurity-based
//! feature importance, and a Huber regression for the out-of-sample
//! return forecasts.

mod forest;
mod huber;
mod lasso;

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use huber::{huber_fit, huber_fit_with_tuning, RobustFit};
pub use lasso::{lasso_path, LassoPath};
