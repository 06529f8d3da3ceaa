pub mod cli;
pub mod config;
pub mod corpus;
pub mod coverage;
pub mod diagnostics;
pub mod generator;
pub mod llm;
pub mod percent;
pub mod repair;
pub mod report;
pub mod sandbox;
pub mod validator;
