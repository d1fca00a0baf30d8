//! C interface to the spiking graph network engine.
//!
//! Objects are opaque handles created by `sg_*_new`/`sg_*_load` functions and
//! released with the matching `sg_*_free`. Every fallible call returns an
//! [`SgStatus`]; on failure a message is available from
//! [`sg_last_error_message`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spikegraph::config::{self, ModelKind, RunConfig};
use spikegraph::data::{self, Checkpoint, DatasetBundle};
use spikegraph::graph::{sbm_dataset, SbmSpec};
use spikegraph::model::Model;
use spikegraph::train::{self, Split, TaskData, Trainer};
use spikegraph::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidConfig = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Graph = 6,
    Training = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Dataset split selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Synthetic benchmark selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgSbmMode {
    Pattern = 0,
    Cluster = 1,
}

/// A loaded dataset with its splits.
pub struct SgDataset {
    bundle: DatasetBundle,
    task: TaskData,
}

/// A trained model.
pub struct SgModel {
    model: Model,
    seed: u64,
}

/// A resumable training session.
pub struct SgTrainer {
    trainer: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SgStatus {
    match e {
        Error::InvalidConfig(_) | Error::InvalidRate(_) | Error::InvalidPenalty(_) | Error::OutOfRange { .. } => {
            SgStatus::InvalidConfig
        }
        Error::Io(_) | Error::MissingFile(_) => SgStatus::Io,
        Error::SchemaViolation { .. }
        | Error::CorruptFile(_)
        | Error::VersionMismatch { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Json(_) => SgStatus::Format,
        Error::ShapeMismatch { .. } | Error::NonBinaryInput { .. } => SgStatus::Shape,
        Error::IndexOutOfRange { .. }
        | Error::SelfLoopRejected(_)
        | Error::IsolatedNode(_)
        | Error::NotABijection(_)
        | Error::EmptyGraph => SgStatus::Graph,
        Error::EmptyMask | Error::NonFiniteLoss { .. } | Error::InsufficientNodes { .. } => SgStatus::Training,
    }
}

enum Failure {
    Status(SgStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SgStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SgStatus::InvalidConfig, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn split_of(s: SgSplit) -> Split {
    match s {
        SgSplit::Train => Split::Train,
        SgSplit::Val => Split::Val,
        SgSplit::Test => Split::Test,
    }
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory in the canonical layout.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_load(path: *const c_char, out: *mut *mut SgDataset) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let bundle = data::load_dataset(Path::new(path))?;
        let task = bundle.task(true)?;
        *out = Box::into_raw(Box::new(SgDataset { bundle, task }));
        Ok(())
    })
}

/// Generates `graphs` stochastic block model graphs with the benchmark
/// parameters of `mode`. 10% of graphs go to validation and 10% to test.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_generate_sbm(
    mode: SgSbmMode,
    graphs: usize,
    seed: u64,
    out: *mut *mut SgDataset,
) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let spec = match mode {
            SgSbmMode::Pattern => SbmSpec::pattern(seed),
            SgSbmMode::Cluster => SbmSpec::cluster(seed),
        };
        if graphs < 2 {
            return Err(Failure::Status(SgStatus::InvalidConfig, "at least 2 graphs required".into()));
        }
        let gs = sbm_dataset(&spec, graphs)?;
        let bundle = data::sbm_bundle("sbm", &gs, spec.num_classes(), 0.1, 0.1)?;
        let task = bundle.task(true)?;
        *out = Box::into_raw(Box::new(SgDataset { bundle, task }));
        Ok(())
    })
}

/// Writes the dataset in the canonical layout.
///
/// # Safety
/// `ds` must come from this library and `dir` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_export(ds: *const SgDataset, dir: *const c_char) -> SgStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let dir = str_arg(dir, "dir")?;
        data::export_dataset(&ds.bundle, Path::new(dir), false)?;
        Ok(())
    })
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_num_nodes(ds: *const SgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.bundle.meta.num_nodes)
}

/// Class count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_num_classes(ds: *const SgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.bundle.meta.num_classes)
}

/// Feature width, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_feature_dim(ds: *const SgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.bundle.meta.feature_dim)
}

/// # Safety
/// `ds` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_free(ds: *mut SgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Starts a training session. `config` holds `key = value` lines in the
/// configuration-file grammar and may be null for the dataset defaults.
///
/// # Safety
/// `ds` must come from this library, `config` be null or NUL-terminated and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_new(
    ds: *const SgDataset,
    config: *const c_char,
    out: *mut *mut SgTrainer,
) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ds = handle(ds, "dataset")?;
        let pairs = if config.is_null() {
            Vec::new()
        } else {
            config::parse_config(str_arg(config, "config")?)?
        };
        let model = match config::lookup(&pairs, "model") {
            Some(m) => config::parse_model(m)?,
            None => ModelKind::GcSnn,
        };
        let mut cfg = RunConfig::defaults(model, ds.bundle.graph_offsets.is_some());
        cfg.apply(&pairs)?;
        cfg.validate()?;
        let spec = cfg.model_spec(ds.bundle.meta.feature_dim, ds.bundle.meta.num_classes);
        let trainer = Trainer::new(spec, cfg.train_config())?;
        *out = Box::into_raw(Box::new(SgTrainer { trainer }));
        Ok(())
    })
}

/// Runs `epochs` training epochs on `ds`.
///
/// # Safety
/// Both handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_step(t: *mut SgTrainer, ds: *const SgDataset, epochs: usize) -> SgStatus {
    guard(|| {
        let t = t.as_mut().ok_or_else(|| null("trainer"))?;
        let ds = handle(ds, "dataset")?;
        for _ in 0..epochs {
            t.trainer.step_epoch(&ds.task)?;
        }
        Ok(())
    })
}

/// Completed epochs, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_epoch(t: *const SgTrainer) -> usize {
    t.as_ref().map_or(0, |t| t.trainer.epoch)
}

/// Copies the per-epoch training loss into `buf` (capacity `len`) and
/// stores the trace length in `written`. Fails with `BufferTooSmall` when
/// `len` is short; `written` is still set.
///
/// # Safety
/// `buf` must hold `len` floats; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_loss_trace(
    t: *const SgTrainer,
    buf: *mut f32,
    len: usize,
    written: *mut usize,
) -> SgStatus {
    guard(|| {
        let t = handle(t, "trainer")?;
        copy_out(&t.trainer.metrics.loss_trace, buf, len, written)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize, written: *mut usize) -> Result<(), Failure> {
    *out_ptr(written, "written")? = src.len();
    if len < src.len() {
        return Err(Failure::Status(
            SgStatus::BufferTooSmall,
            format!("buffer holds {len}, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Saves a resumable checkpoint.
///
/// # Safety
/// `t` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_save(t: *const SgTrainer, path: *const c_char) -> SgStatus {
    guard(|| {
        let t = handle(t, "trainer")?;
        let path = str_arg(path, "path")?;
        data::save_checkpoint(&Checkpoint::from_trainer(&t.trainer), Path::new(path))?;
        Ok(())
    })
}

/// Resumes a session from a checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_load(path: *const c_char, out: *mut *mut SgTrainer) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let trainer = data::load_checkpoint(Path::new(path))?.into_trainer()?;
        *out = Box::into_raw(Box::new(SgTrainer { trainer }));
        Ok(())
    })
}

/// The model with the best validation accuracy seen so far.
///
/// # Safety
/// `t` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_best_model(t: *const SgTrainer, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let t = handle(t, "trainer")?;
        let model = Checkpoint::from_trainer(&t.trainer).best_model()?;
        *out = Box::into_raw(Box::new(SgModel {
            model,
            seed: t.trainer.cfg.seed,
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_free(t: *mut SgTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Loads the best-validation model stored in a checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sg_model_load(path: *const c_char, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = data::load_checkpoint(Path::new(path))?;
        let model = ck.best_model()?;
        *out = Box::into_raw(Box::new(SgModel { model, seed: ck.cfg.seed }));
        Ok(())
    })
}

fn check_compatible(m: &SgModel, ds: &SgDataset) -> Result<(), Failure> {
    let spec = &m.model.spec;
    if spec.input_dim != ds.bundle.meta.feature_dim || spec.num_classes != ds.bundle.meta.num_classes {
        return Err(Failure::Status(
            SgStatus::Shape,
            format!(
                "model expects {} features and {} classes; dataset has {} and {}",
                spec.input_dim, spec.num_classes, ds.bundle.meta.feature_dim, ds.bundle.meta.num_classes
            ),
        ));
    }
    Ok(())
}

/// Accuracy and mean decision step on a split.
///
/// # Safety
/// Handles must come from this library; `accuracy` and `mean_steps` must be
/// valid or null.
#[no_mangle]
pub unsafe extern "C" fn sg_model_evaluate(
    m: *const SgModel,
    ds: *const SgDataset,
    split: SgSplit,
    accuracy: *mut f32,
    mean_steps: *mut f64,
) -> SgStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let ds = handle(ds, "dataset")?;
        check_compatible(m, ds)?;
        let r = train::evaluate(&m.model, &ds.task, split_of(split), m.seed)?;
        if let Some(a) = accuracy.as_mut() {
            *a = r.accuracy;
        }
        if let Some(s) = mean_steps.as_mut() {
            *s = r.mean_steps;
        }
        Ok(())
    })
}

/// Per-layer firing rates on the dataset's probe graph.
///
/// # Safety
/// See [`sg_trainer_loss_trace`] for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn sg_model_firing_rates(
    m: *const SgModel,
    ds: *const SgDataset,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> SgStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let ds = handle(ds, "dataset")?;
        check_compatible(m, ds)?;
        let rates = train::probe_firing_rates(&m.model, &ds.task, m.seed)?;
        copy_out(&rates, buf, len, written)
    })
}

/// Feature-transform compression ratio of one evaluation pass.
///
/// # Safety
/// Handles must come from this library; `ratio` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_model_compression_ratio(
    m: *const SgModel,
    ds: *const SgDataset,
    ratio: *mut f64,
) -> SgStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let ds = handle(ds, "dataset")?;
        let ratio = out_ptr(ratio, "ratio")?;
        check_compatible(m, ds)?;
        *ratio = train::count_ops(&m.model, &ds.task, m.seed)?.compression_ratio;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_model_free(m: *mut SgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
