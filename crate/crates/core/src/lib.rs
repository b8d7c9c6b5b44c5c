pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod objectives;
pub mod shape;
pub mod homotopy;
pub mod surrogate;
pub mod motor;
pub mod verify;
pub mod config;
pub mod output;
pub mod run;
