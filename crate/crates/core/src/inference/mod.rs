//! Responses, least squares, the treatment test and its power.

pub mod distributions;
pub mod ols;
pub mod power;

pub use distributions::{noncentral_f_cdf, noncentral_f_sf, noncentral_t_cdf, t_quantile};
pub use ols::{generate_responses, ols_fit, ols_fit_cross, t_statistic, CrossProducts, OlsFit, ResponseModel, TrialData};
pub use power::{conditional_power, ell_n, loss_of_power_ratio, predicted_loss_of_power, PowerCalibration, Sides, TestFamily, TestSpec};
