//! File formats: k-space containers, PGM previews, CSV reports and text
//! masks. All binary layouts are little-endian except PGM samples, which
//! follow the PGM convention of big-endian.
//!
//! External datasets can be imported by converting them into a
//! [`KspData`] and writing it with [`write_ksp`].

mod ksp;
mod mask_text;
mod pgm;
mod report;

pub use ksp::{
    decode_ksp, encode_ksp, images_to_ksp, ksp_to_images, read_ksp, read_ksp_header, write_ksp, Dtype, KspData,
    KspHeader, MaskHeader, MAGIC, MAX_HEADER_LEN, VERSION,
};
pub use mask_text::{mask_from_text, mask_to_text, read_mask_text, write_mask_text};
pub use pgm::{decode_pgm, quantize, read_pgm, sidecar_path, write_pgm, Pgm, PgmNormalization, PgmScale, MAXVAL};
pub use report::{
    aggregate_row, read_report, write_report, write_report_to, write_trace, write_trace_to, ReportRow, REPORT_HEADER,
    TRACE_HEADER,
};
