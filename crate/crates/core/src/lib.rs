pub mod belief;
pub mod block_model;
pub mod economics;
pub mod error;
pub mod experiment;
pub mod geostat;
pub mod io;
pub mod pomdp_engine;
pub mod sa_scheduler;
pub mod schedule;
pub mod seed;
