pub mod basic;
pub mod conv;
mod gemm;
pub mod norm;
pub mod pool;
