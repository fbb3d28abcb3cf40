pub mod decentralized;
pub mod lmi;
pub mod model;
pub mod numerics;
pub mod simulate;
pub mod sparsify;
pub mod synthesis;
