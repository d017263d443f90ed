pub mod autodiff;
pub mod choreo;
pub mod cli;
pub mod eval;
pub mod experiment;
pub mod flow;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod repr;
pub mod schema;
