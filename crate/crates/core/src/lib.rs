pub mod backend;
pub mod event;
pub mod memory;
pub mod message;
pub mod queue;
pub mod tools;
pub mod prompts;
pub mod control;
pub mod agents;
pub mod coordinator;
