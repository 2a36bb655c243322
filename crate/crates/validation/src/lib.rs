//! Host crate for the end-to-end acceptance suite (`cargo test -p dsdp-validation`).
