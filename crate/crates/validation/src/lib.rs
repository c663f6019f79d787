//! Acceptance checks for `emlreg`. Everything lives in `tests/acceptance.rs`.
