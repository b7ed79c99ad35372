//! Acceptance suite for `cmoment`. Everything lives in `tests/acceptance.rs`;
//! run it with `cargo test -p cmoment-validation --test acceptance`.
