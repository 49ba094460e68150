pub mod compare;
pub mod export;
pub mod fit;
pub mod ingest;
pub mod sensitivity;
pub mod simulate;
