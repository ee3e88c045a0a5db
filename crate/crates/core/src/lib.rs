//! Automation of simulation campaigns.
//!
//! A campaign is a set of [`problem::ProblemSpec`]s, each grouping
//! parametrized [`case::CaseSpec`]s with the post-processing that compares
//! them. [`automator::Automator`] turns a campaign into a task graph
//! ([`task`]), runs it through a core-aware [`scheduler::Scheduler`] on the
//! local machine and any SSH workers ([`remote`]), and skips whatever
//! persistent evidence shows is already done.

pub mod automator;
pub mod campaign;
pub mod case;
pub mod cli;
pub mod config;
pub mod demo;
pub mod fnmatch;
pub mod problem;
pub mod remote;
pub mod results;
pub mod scheduler;
pub mod shell;
pub mod task;
