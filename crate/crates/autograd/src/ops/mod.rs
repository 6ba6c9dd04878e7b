pub mod conv;
pub mod deform;
pub mod elementwise;
pub mod norm;
pub mod reduce;
pub mod spatial;
