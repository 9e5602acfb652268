pub mod numeric;
pub mod data;
pub mod backbone;
pub mod peft;
pub mod gauss_store;
pub mod classifiers;
pub mod ensemble;
pub mod harness;
