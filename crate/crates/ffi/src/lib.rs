//! C ABI over the `lookat` library.
//!
//! Every function returns an [`LkStatus`]; on failure a message is available
//! from [`lk_last_error_message`] on the same thread. Objects are opaque
//! handles released with their `*_free` function. Output buffers are owned by
//! the caller and sized from the matching `*_shape` query.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use lookat::bench::cost_model;
use lookat::metrics::evaluate;
use lookat::{
    adc_scores, build_luts, compression_stats, encode_keys, generate_synthetic, load_dump,
    lookat_attention, reference_attention, save_dump, train_codebook, AttentionDump, Codebook,
    CompressedKeyCache, Error, KeyDistribution, PqConfig, SynthSpec, Tensor3,
};

/// Result code of every `lk_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    NonFinite = 6,
    InsufficientCalibration = 7,
    CorruptCode = 8,
    OutOfRange = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Attention dump: queries, keys and values of shape `[H, L, d_k]`.
pub struct LkDump(AttentionDump);

/// Trained product-quantization codebook.
pub struct LkCodebook(Codebook);

/// Encoded keys, `m` one-byte codes per token.
pub struct LkCodes(CompressedKeyCache);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LkCompressionStats {
    pub bytes_per_token_baseline: f64,
    pub bytes_per_token_compressed: f64,
    pub ratio: f64,
    pub codebook_bytes: u64,
}

/// Per-query cost of one scoring method. `flops_entry_convention` is 0 when
/// the convention does not apply.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LkCost {
    pub flops: u64,
    pub flops_entry_convention: u64,
    pub bytes_loaded: u64,
    pub bytes_per_key: f64,
}

/// Fidelity of an approximation against exact attention.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LkFidelity {
    pub cosine_sim: f64,
    pub kl_div: f64,
    pub spearman_rho: f64,
    pub top5_acc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> LkStatus {
    match err {
        Error::Io(_) => LkStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::MalformedHeader(_)
        | Error::PayloadLengthMismatch { .. }
        | Error::Json(_) => LkStatus::Format,
        Error::NonFinite { .. } => LkStatus::NonFinite,
        Error::ShapeMismatch(_)
        | Error::SubspaceMismatch { .. }
        | Error::DimensionMismatch { .. } => LkStatus::ShapeMismatch,
        Error::InvalidConfig(_) => LkStatus::InvalidArgument,
        Error::InsufficientCalibration { .. } => LkStatus::InsufficientCalibration,
        Error::CorruptCode { .. } => LkStatus::CorruptCode,
        Error::HeadOutOfRange { .. } | Error::LengthOutOfRange { .. } => LkStatus::OutOfRange,
    }
}

struct Failure(LkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: LkStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `body`, recording the message of any error or panic.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            LkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            LkStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(LkStatus::NullPointer, format!("{name} is null")),
        Ok,
    )
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(LkStatus::NullPointer, "path is null");
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LkStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(LkStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(
    p: *mut T,
    len: usize,
    need: usize,
    name: &str,
) -> Result<&'a mut [T], Failure> {
    if len < need {
        return fail(
            LkStatus::BufferTooSmall,
            format!("{name} holds {len} elements, {need} needed"),
        );
    }
    if p.is_null() {
        return fail(LkStatus::NullPointer, format!("{name} is null"));
    }
    Ok(&mut slice::from_raw_parts_mut(p, len)[..need])
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(LkStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(LkStatus::NullPointer, "output pointer is null");
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next `lk_*` call on the same thread.
#[no_mangle]
pub extern "C" fn lk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn lk_status_name(status: LkStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        LkStatus::Ok => b"ok\0",
        LkStatus::NullPointer => b"null pointer\0",
        LkStatus::InvalidArgument => b"invalid argument\0",
        LkStatus::Io => b"i/o error\0",
        LkStatus::Format => b"format error\0",
        LkStatus::ShapeMismatch => b"shape mismatch\0",
        LkStatus::NonFinite => b"non-finite value\0",
        LkStatus::InsufficientCalibration => b"insufficient calibration\0",
        LkStatus::CorruptCode => b"corrupt code\0",
        LkStatus::OutOfRange => b"out of range\0",
        LkStatus::BufferTooSmall => b"buffer too small\0",
        LkStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lk_dump_load(path: *const c_char, out: *mut *mut LkDump) -> LkStatus {
    guard(|| emit(out, LkDump(load_dump(c_path(path)?)?)))
}

/// # Safety
/// `dump` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lk_dump_save(dump: *const LkDump, path: *const c_char) -> LkStatus {
    guard(|| Ok(save_dump(&obj(dump, "dump")?.0, c_path(path)?)?))
}

/// Builds a dump from three row-major `[H, L, d_k]` arrays, copied.
///
/// # Safety
/// `queries`, `keys` and `values` must each point to `H * L * d_k` floats.
#[no_mangle]
pub unsafe extern "C" fn lk_dump_from_arrays(
    head_count: usize,
    seq_len: usize,
    head_dim: usize,
    queries: *const f32,
    keys: *const f32,
    values: *const f32,
    causal: bool,
    out: *mut *mut LkDump,
) -> LkStatus {
    guard(|| {
        let shape = [head_count, seq_len, head_dim];
        let n = head_count
            .checked_mul(seq_len)
            .and_then(|x| x.checked_mul(head_dim))
            .ok_or_else(|| Failure(LkStatus::InvalidArgument, "shape overflows".into()))?;
        let t = |p, name| -> Result<Tensor3, Failure> {
            Ok(Tensor3::from_vec(shape, input(p, n, name)?.to_vec())?)
        };
        let dump = AttentionDump::new(
            t(queries, "queries")?,
            t(keys, "keys")?,
            t(values, "values")?,
            "ffi",
            causal,
        )?;
        emit(out, LkDump(dump))
    })
}

/// Synthetic dump. `num_clusters == 0` draws isotropic Gaussian keys, otherwise
/// keys cluster around that many centers with the given spread.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lk_synth_generate(
    head_count: usize,
    seq_len: usize,
    head_dim: usize,
    num_clusters: usize,
    spread: f32,
    seed: u64,
    causal: bool,
    out: *mut *mut LkDump,
) -> LkStatus {
    guard(|| {
        let distribution = if num_clusters == 0 {
            KeyDistribution::IsotropicGaussian
        } else {
            KeyDistribution::ClusteredGaussian {
                num_clusters,
                spread,
            }
        };
        let spec = SynthSpec {
            head_count,
            seq_len,
            head_dim,
            distribution,
            seed,
            causal,
        };
        emit(out, LkDump(generate_synthetic(&spec)?))
    })
}

/// # Safety
/// `dump` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn lk_dump_shape(
    dump: *const LkDump,
    head_count: *mut usize,
    seq_len: *mut usize,
    head_dim: *mut usize,
) -> LkStatus {
    guard(|| {
        let d = &obj(dump, "dump")?.0;
        for (p, v) in [
            (head_count, d.head_count()),
            (seq_len, d.seq_len()),
            (head_dim, d.head_dim()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dump` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lk_dump_free(dump: *mut LkDump) {
    if !dump.is_null() {
        drop(Box::from_raw(dump));
    }
}

/// Trains a codebook on the dump's keys. `tolerance` below zero selects the default.
///
/// # Safety
/// `dump` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn lk_codebook_train(
    dump: *const LkDump,
    num_subspaces: usize,
    num_centroids: usize,
    kmeans_iters: usize,
    tolerance: f64,
    seed: u64,
    out: *mut *mut LkCodebook,
) -> LkStatus {
    guard(|| {
        let d = &obj(dump, "dump")?.0;
        let defaults = PqConfig::default();
        let config = PqConfig {
            num_subspaces,
            num_centroids,
            kmeans_iters,
            kmeans_seed: seed,
            tolerance: if tolerance < 0.0 {
                defaults.tolerance
            } else {
                tolerance
            },
        };
        emit(
            out,
            LkCodebook(train_codebook(d.keys.as_slice(), d.head_dim(), &config)?),
        )
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lk_codebook_load(
    path: *const c_char,
    out: *mut *mut LkCodebook,
) -> LkStatus {
    guard(|| emit(out, LkCodebook(Codebook::load(c_path(path)?)?)))
}

/// # Safety
/// `codebook` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lk_codebook_save(
    codebook: *const LkCodebook,
    path: *const c_char,
) -> LkStatus {
    guard(|| Ok(obj(codebook, "codebook")?.0.save(c_path(path)?)?))
}

/// # Safety
/// `codebook` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn lk_codebook_shape(
    codebook: *const LkCodebook,
    num_subspaces: *mut usize,
    num_centroids: *mut usize,
    sub_dim: *mut usize,
) -> LkStatus {
    guard(|| {
        let c = &obj(codebook, "codebook")?.0;
        for (p, v) in [
            (num_subspaces, c.num_subspaces()),
            (num_centroids, c.num_centroids()),
            (sub_dim, c.sub_dim()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `codebook` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lk_codebook_free(codebook: *mut LkCodebook) {
    if !codebook.is_null() {
        drop(Box::from_raw(codebook));
    }
}

/// # Safety
/// `dump` and `codebook` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn lk_encode(
    dump: *const LkDump,
    codebook: *const LkCodebook,
    out: *mut *mut LkCodes,
) -> LkStatus {
    guard(|| {
        let cache = encode_keys(&obj(dump, "dump")?.0.keys, &obj(codebook, "codebook")?.0)?;
        emit(out, LkCodes(cache))
    })
}

/// # Safety
/// `codes` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn lk_codes_shape(
    codes: *const LkCodes,
    head_count: *mut usize,
    seq_len: *mut usize,
    num_subspaces: *mut usize,
) -> LkStatus {
    guard(|| {
        let c = &obj(codes, "codes")?.0;
        for (p, v) in [
            (head_count, c.head_count()),
            (seq_len, c.seq_len()),
            (num_subspaces, c.num_subspaces()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the `[H, L, m]` code bytes into `out`.
///
/// # Safety
/// `out` must hold `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lk_codes_copy(
    codes: *const LkCodes,
    out: *mut u8,
    out_len: usize,
) -> LkStatus {
    guard(|| {
        let c = obj(codes, "codes")?.0.codes();
        output(out, out_len, c.len(), "out")?.copy_from_slice(c);
        Ok(())
    })
}

/// # Safety
/// `codes` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lk_codes_free(codes: *mut LkCodes) {
    if !codes.is_null() {
        drop(Box::from_raw(codes));
    }
}

/// Writes the `[m, K]` lookup tables for one query.
///
/// # Safety
/// `query` must hold `query_len` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn lk_build_luts(
    codebook: *const LkCodebook,
    query: *const f32,
    query_len: usize,
    out: *mut f32,
    out_len: usize,
) -> LkStatus {
    guard(|| {
        let luts = build_luts(
            input(query, query_len, "query")?,
            &obj(codebook, "codebook")?.0,
        )?;
        output(out, out_len, luts.as_slice().len(), "out")?.copy_from_slice(luts.as_slice());
        Ok(())
    })
}

/// Scores one query against every token of `head` through lookup tables,
/// writing `L` unscaled scores.
///
/// # Safety
/// `query` must hold `query_len` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn lk_adc_scores(
    codebook: *const LkCodebook,
    codes: *const LkCodes,
    head: usize,
    query: *const f32,
    query_len: usize,
    out: *mut f32,
    out_len: usize,
) -> LkStatus {
    guard(|| {
        let cb = &obj(codebook, "codebook")?.0;
        let cache = &obj(codes, "codes")?.0;
        cache.check_against(cb)?;
        let luts = build_luts(input(query, query_len, "query")?, cb)?;
        let scores = adc_scores(&luts, cache, head)?;
        output(out, out_len, scores.len(), "out")?.copy_from_slice(&scores);
        Ok(())
    })
}

/// Exact attention output, `[H, L, d_k]` floats.
///
/// # Safety
/// `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn lk_reference_attention(
    dump: *const LkDump,
    out: *mut f32,
    out_len: usize,
) -> LkStatus {
    guard(|| {
        let o = reference_attention(&obj(dump, "dump")?.0)?;
        output(out, out_len, o.output.as_slice().len(), "out")?
            .copy_from_slice(o.output.as_slice());
        Ok(())
    })
}

/// Attention output with keys scored from codes, `[H, L, d_k]` floats.
///
/// # Safety
/// `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn lk_lookat_attention(
    dump: *const LkDump,
    codebook: *const LkCodebook,
    codes: *const LkCodes,
    out: *mut f32,
    out_len: usize,
) -> LkStatus {
    guard(|| {
        let o = lookat_attention(
            &obj(dump, "dump")?.0,
            &obj(codes, "codes")?.0,
            &obj(codebook, "codebook")?.0,
        )?;
        output(out, out_len, o.output.as_slice().len(), "out")?
            .copy_from_slice(o.output.as_slice());
        Ok(())
    })
}

/// Compares lookup-table attention against exact attention on the same dump.
///
/// # Safety
/// Handles must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn lk_evaluate_lookat(
    dump: *const LkDump,
    codebook: *const LkCodebook,
    codes: *const LkCodes,
    out: *mut LkFidelity,
) -> LkStatus {
    guard(|| {
        let d = &obj(dump, "dump")?.0;
        let approx = lookat_attention(d, &obj(codes, "codes")?.0, &obj(codebook, "codebook")?.0)?;
        let r = evaluate(&reference_attention(d)?, &approx)?;
        write(
            out,
            LkFidelity {
                cosine_sim: r.cosine_sim,
                kl_div: r.kl_div,
                spearman_rho: r.spearman_rho,
                top5_acc: r.top5_acc,
            },
        )
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lk_compression_stats(
    head_dim: usize,
    num_subspaces: usize,
    num_centroids: usize,
    baseline_bytes_per_dim: f64,
    out: *mut LkCompressionStats,
) -> LkStatus {
    guard(|| {
        let s = compression_stats(
            head_dim,
            num_subspaces,
            num_centroids,
            baseline_bytes_per_dim,
        )?;
        write(
            out,
            LkCompressionStats {
                bytes_per_token_baseline: s.bytes_per_token_baseline,
                bytes_per_token_compressed: s.bytes_per_token_compressed,
                ratio: s.ratio,
                codebook_bytes: s.codebook_bytes,
            },
        )
    })
}

/// # Safety
/// `standard` and `lookup` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lk_cost_model(
    seq_len: usize,
    head_dim: usize,
    num_subspaces: usize,
    num_centroids: usize,
    bytes_per_key_dim: usize,
    standard: *mut LkCost,
    lookup: *mut LkCost,
) -> LkStatus {
    guard(|| {
        let (s, l) = cost_model(
            seq_len,
            head_dim,
            num_subspaces,
            num_centroids,
            bytes_per_key_dim,
        )?;
        let conv = |r: lookat::bench::CostModelResult| LkCost {
            flops: r.flops_per_query,
            flops_entry_convention: r.flops_per_query_entry_convention.unwrap_or(0),
            bytes_loaded: r.bytes_loaded_per_query,
            bytes_per_key: r.bytes_per_key,
        };
        write(standard, conv(s))?;
        write(lookup, conv(l))
    })
}
