//! Tool configuration (stub).
