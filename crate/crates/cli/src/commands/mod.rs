pub mod analysis;
pub mod data;
pub mod distance;
pub mod typology;
pub mod validate;
