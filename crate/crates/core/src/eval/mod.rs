//! Experiment orchestration (stub).
