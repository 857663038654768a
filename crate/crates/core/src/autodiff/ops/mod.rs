pub mod conv;
pub mod dense;
pub(crate) mod loss;
pub mod norm;
pub mod pool;
