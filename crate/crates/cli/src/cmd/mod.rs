pub mod asd;
pub mod attend;
pub mod denoise;
pub mod generate;
pub mod pretrain;
pub mod stats;
pub mod sweep;
