use std::ffi::{CStr, CString};
use std::ptr;

use psmed_ffi::*;

fn text(p: *const std::ffi::c_char) -> String {
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn simulated(n: usize, seed: u64) -> *mut PsmedDataset {
    let mut data = ptr::null_mut();
    assert_eq!(unsafe { psmed_dataset_simulate(n, seed, &mut data) }, PsmedStatus::Ok);
    data
}

#[test]
fn analyze_round_trip() {
    let data = simulated(600, 1);
    assert_eq!(unsafe { psmed_dataset_rows(data) }, 600);
    let mut opts = psmed_options_default();
    opts.methods = PSMED_METHOD_MR | PSMED_METHOD_A;
    opts.scales = PSMED_SCALE_DIFFERENCE | PSMED_SCALE_RATIO;
    opts.bootstrap = 0;
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { psmed_analyze(data, &opts, &mut res) }, PsmedStatus::Ok);
    let len = unsafe { psmed_results_len(res) };
    assert!(len > 0);
    let mut seen = false;
    for i in 0..len {
        let mut row = std::mem::MaybeUninit::<PsmedEstimate>::uninit();
        assert_eq!(unsafe { psmed_results_get(res, i, row.as_mut_ptr()) }, PsmedStatus::Ok);
        let row = unsafe { row.assume_init() };
        if text(row.estimand) == "pnie" && text(row.stratum) == "10" && text(row.method) == "mr" && text(row.scale) == "difference" {
            assert!(row.point.is_finite());
            seen = true;
        }
    }
    assert!(seen);
    let mut row = std::mem::MaybeUninit::<PsmedEstimate>::uninit();
    assert_eq!(unsafe { psmed_results_get(res, len, row.as_mut_ptr()) }, PsmedStatus::OutOfRange);
    unsafe {
        psmed_results_free(res);
        psmed_dataset_free(data);
    }
}

#[test]
fn matches_the_library() {
    let data = simulated(500, 2);
    let mut opts = psmed_options_default();
    opts.bootstrap = 0;
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { psmed_analyze(data, &opts, &mut res) }, PsmedStatus::Ok);
    let direct = {
        let d = psmed::simulation::simulate(500, 2).unwrap();
        let mut o = psmed::inference::AnalysisOptions::new(&d);
        o.bootstrap = 0;
        psmed::inference::analyze(&d, &o).unwrap().results
    };
    assert_eq!(unsafe { psmed_results_len(res) }, direct.len());
    for (i, want) in direct.iter().enumerate() {
        let mut row = std::mem::MaybeUninit::<PsmedEstimate>::uninit();
        unsafe { psmed_results_get(res, i, row.as_mut_ptr()) };
        let row = unsafe { row.assume_init() };
        assert_eq!(row.point.to_bits(), want.point.to_bits());
    }
    unsafe {
        psmed_results_free(res);
        psmed_dataset_free(data);
    }
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    let mut data = ptr::null_mut();
    let z = [1u8, 0];
    let d = [0u8, 1];
    let m = [0.0, 1.0];
    let y = [1.0, 2.0];
    let x = [0.1, 0.2];
    let s = unsafe {
        psmed_dataset_new(x.as_ptr(), 2, 1, z.as_ptr(), d.as_ptr(), m.as_ptr(), y.as_ptr(), PsmedMediator::Binary, 0, PsmedMonotonicity::Standard, &mut data)
    };
    assert_eq!(s, PsmedStatus::DataError);
    assert!(data.is_null());
    assert!(!text(psmed_last_error()).is_empty());
    let s = unsafe {
        psmed_dataset_new(ptr::null(), 2, 1, z.as_ptr(), d.as_ptr(), m.as_ptr(), y.as_ptr(), PsmedMediator::Binary, 0, PsmedMonotonicity::Standard, &mut data)
    };
    assert_eq!(s, PsmedStatus::NullPointer);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { psmed_analyze(ptr::null(), ptr::null(), &mut res) }, PsmedStatus::NullPointer);
    let data = simulated(300, 3);
    let mut opts = psmed_options_default();
    opts.methods = 1 << 9;
    assert_eq!(unsafe { psmed_analyze(data, &opts, &mut res) }, PsmedStatus::ConfigError);
    opts = psmed_options_default();
    opts.bootstrap = 10;
    assert_eq!(unsafe { psmed_analyze(data, &opts, &mut res) }, PsmedStatus::ConfigError);
    assert!(res.is_null());
    unsafe {
        psmed_dataset_free(data);
        psmed_dataset_free(ptr::null_mut());
        psmed_results_free(ptr::null_mut());
    }
}

#[test]
fn oracle_status() {
    assert_eq!(unsafe { psmed_oracle_certify(ptr::null()) }, PsmedStatus::Ok);
    let missing = CString::new("/nonexistent/fixture.json").unwrap();
    assert_eq!(unsafe { psmed_oracle_certify(missing.as_ptr()) }, PsmedStatus::DataError);
    assert_eq!(text(psmed_version()), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/psmed.h")).unwrap();
    for name in [
        "psmed_version",
        "psmed_last_error",
        "psmed_options_default",
        "psmed_dataset_new",
        "psmed_dataset_simulate",
        "psmed_dataset_rows",
        "psmed_dataset_free",
        "psmed_analyze",
        "psmed_results_len",
        "psmed_results_get",
        "psmed_results_free",
        "psmed_oracle_certify",
        "PSMED_STATUS_ESTIMATION_ERROR",
        "typedef struct PsmedDataset PsmedDataset",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"psmed.h\"\nint main(void) {\n  PsmedDataset *data = NULL;\n  PsmedOptions o = psmed_options_default();\n  o.methods = PSMED_METHOD_MR | PSMED_METHOD_NP;\n  if (psmed_dataset_simulate(100, 1, &data) != PSMED_STATUS_OK) return 1;\n  PsmedResults *res = NULL;\n  PsmedStatus s = psmed_analyze(data, &o, &res);\n  psmed_results_free(res);\n  psmed_dataset_free(data);\n  return (int)s;\n}\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler; skipped");
            return;
        }
    };
    assert!(status.success());
}
