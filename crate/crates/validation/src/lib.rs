//! Acceptance suite for `qsd-magic`. The criteria live in `tests/acceptance.rs`;
//! run them with `cargo test -p qsd-magic-validation --test acceptance`.
