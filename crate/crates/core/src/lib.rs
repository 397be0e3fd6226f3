pub mod backend;
pub mod bitmap;
pub mod builder;
pub mod dataset;
pub mod eval;
pub mod images;
pub mod layout;
pub mod par;
pub mod pipeline;
pub mod qa;
pub mod question;
pub mod relation;
pub mod seed;
pub mod skg;
