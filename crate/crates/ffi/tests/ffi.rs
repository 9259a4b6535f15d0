use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use relu_regions::model::random_network;
use relu_regions::netfile::save_network;
use relu_regions_ffi::*;

const SINGLE_NEURON: &str = r#"{"format_version":1,"input_dim":1,"layers":[
    {"rows":1,"cols":1,"relu":true,"weights":[1.0],"bias":[0.0]}]}"#;

fn last_error() -> String {
    let p = rr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn single_neuron() -> *mut RrNetwork {
    let json = CString::new(SINGLE_NEURON).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { rr_network_from_json(json.as_ptr(), &mut net) }, RrStatus::Ok);
    net
}

fn bound_c(net: *const RrNetwork, center: &[f64], radius: f64) -> usize {
    let mut report = ptr::null_mut();
    let status = unsafe { rr_local_region_bound(net, center.as_ptr(), center.len(), radius, &mut report) };
    assert_eq!(status, RrStatus::Ok, "{}", last_error());
    let mut c = usize::MAX;
    assert_eq!(unsafe { rr_report_c(report, &mut c) }, RrStatus::Ok);
    unsafe { rr_report_free(report) };
    c
}

#[test]
fn single_neuron_fixtures() {
    let net = single_neuron();
    assert_eq!(bound_c(net, &[1.0], 0.5), 0);
    assert_eq!(bound_c(net, &[1.0], 2.0), 1);
    assert_eq!(bound_c(net, &[-1.0], 0.5), 0);
    unsafe { rr_network_free(net) };
}

#[test]
fn shape_queries_and_forward() {
    let widths = [4usize, 5, 3];
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { rr_network_random(widths.as_ptr(), widths.len(), 9, 1.0, &mut net) }, RrStatus::Ok);
    let (mut input, mut output, mut layers) = (0, 0, 0);
    unsafe {
        assert_eq!(rr_network_input_dim(net, &mut input), RrStatus::Ok);
        assert_eq!(rr_network_output_dim(net, &mut output), RrStatus::Ok);
        assert_eq!(rr_network_layer_count(net, &mut layers), RrStatus::Ok);
    }
    assert_eq!((input, output, layers), (4, 3, 2));

    let x = [0.1, 0.2, 0.3, 0.4];
    let mut y = [0.0; 3];
    assert_eq!(unsafe { rr_network_forward(net, x.as_ptr(), 4, y.as_mut_ptr(), 3) }, RrStatus::Ok);
    let expected = random_network(&widths, 9, 1.0).unwrap().output(&x).unwrap();
    assert_eq!(y.to_vec(), expected);

    let mut short = [0.0; 2];
    assert_eq!(unsafe { rr_network_forward(net, x.as_ptr(), 4, short.as_mut_ptr(), 2) }, RrStatus::DimensionMismatch);
    assert_eq!(unsafe { rr_network_forward(net, x.as_ptr(), 3, y.as_mut_ptr(), 3) }, RrStatus::DimensionMismatch);
    unsafe { rr_network_free(net) };
}

#[test]
fn s_counts_and_buffer_sizing() {
    let widths = [3usize, 6, 6, 2];
    let mut net = ptr::null_mut();
    unsafe { rr_network_random(widths.as_ptr(), widths.len(), 2, 1.0, &mut net) };
    let center = [0.5, 0.5, 0.5];
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { rr_local_region_bound(net, center.as_ptr(), 3, 0.8, &mut report) }, RrStatus::Ok);

    let mut written = 0;
    let mut small = [0usize; 1];
    assert_eq!(unsafe { rr_report_s_counts(report, small.as_mut_ptr(), 1, &mut written) }, RrStatus::BufferTooSmall);
    assert_eq!(written, 3);

    let mut counts = [usize::MAX; 3];
    assert_eq!(unsafe { rr_report_s_counts(report, counts.as_mut_ptr(), 3, &mut written) }, RrStatus::Ok);
    let mut c = 0;
    unsafe { rr_report_c(report, &mut c) };
    assert_eq!(counts.iter().sum::<usize>(), c);
    assert_eq!(counts[2], 0, "linear output layer never counts");
    unsafe {
        rr_report_free(report);
        rr_network_free(net);
    }
}

#[test]
fn soundness_and_segments() {
    let widths = [2usize, 8, 8, 2];
    let mut net = ptr::null_mut();
    unsafe { rr_network_random(widths.as_ptr(), widths.len(), 5, 1.0, &mut net) };
    let center = [0.3, 0.7];
    let (mut violations, mut distinct, mut c) = (usize::MAX, 0, 0);
    let status =
        unsafe { rr_check_soundness(net, center.as_ptr(), 2, 0.4, 2000, 1, &mut violations, &mut distinct, &mut c) };
    assert_eq!(status, RrStatus::Ok);
    assert_eq!(violations, 0);
    assert!(distinct >= 1 && (c >= 63 || distinct as u64 <= 1 << c));
    // Optional outs may be null.
    let status = unsafe {
        rr_check_soundness(net, center.as_ptr(), 2, 0.4, 10, 1, ptr::null_mut(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(status, RrStatus::Ok);

    let (a, b) = ([0.0, 0.0], [1.0, 1.0]);
    let mut pieces = 0;
    assert_eq!(unsafe { rr_segment_piece_count(net, a.as_ptr(), b.as_ptr(), 2, &mut pieces) }, RrStatus::Ok);
    assert!(pieces >= 1);
    assert_eq!(
        unsafe { rr_segment_piece_count(net, a.as_ptr(), a.as_ptr(), 2, &mut pieces) },
        RrStatus::InvalidArgument
    );
    assert!(last_error().contains("degenerate"));
    unsafe { rr_network_free(net) };
}

#[test]
fn error_codes() {
    let mut net = ptr::null_mut();
    let bad = CString::new("{\"format_version\":1,").unwrap();
    assert_eq!(unsafe { rr_network_from_json(bad.as_ptr(), &mut net) }, RrStatus::Parse);
    assert!(net.is_null());
    assert!(last_error().contains("parse error"));

    assert_eq!(unsafe { rr_network_from_json(ptr::null(), &mut net) }, RrStatus::NullPointer);
    assert_eq!(last_error(), "json is null");

    let missing = CString::new("/nonexistent/net.json").unwrap();
    assert_eq!(unsafe { rr_network_load(missing.as_ptr(), &mut net) }, RrStatus::Io);

    let inconsistent = CString::new(
        r#"{"format_version":1,"input_dim":2,"layers":[{"rows":1,"cols":1,"relu":true,"weights":[1.0],"bias":[0.0]}]}"#,
    )
    .unwrap();
    let status = unsafe { rr_network_from_json(inconsistent.as_ptr(), &mut net) };
    assert!(matches!(status, RrStatus::InvalidNetwork | RrStatus::Parse), "{status:?}");

    let widths = [3usize];
    assert_eq!(unsafe { rr_network_random(widths.as_ptr(), 1, 0, 1.0, &mut net) }, RrStatus::InvalidArgument);

    let single = single_neuron();
    let mut report = ptr::null_mut();
    let two = [0.0, 0.0];
    assert_eq!(
        unsafe { rr_local_region_bound(single, two.as_ptr(), 2, 0.5, &mut report) },
        RrStatus::DimensionMismatch
    );
    assert_eq!(unsafe { rr_local_region_bound(single, two.as_ptr(), 1, -1.0, &mut report) }, RrStatus::InvalidArgument);
    assert_eq!(unsafe { rr_local_region_bound(ptr::null(), two.as_ptr(), 1, 0.5, &mut report) }, RrStatus::NullPointer);
    let mut c = 0;
    assert_eq!(unsafe { rr_report_c(ptr::null(), &mut c) }, RrStatus::NullPointer);
    unsafe {
        rr_network_free(single);
        rr_network_free(ptr::null_mut());
        rr_report_free(ptr::null_mut());
    }
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let original = random_network(&[3, 4, 2], 17, 0.5).unwrap();
    save_network(&original, &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { rr_network_load(c_path.as_ptr(), &mut net) }, RrStatus::Ok);
    let x = [0.2, 0.4, 0.6];
    let mut y = [0.0; 2];
    unsafe { rr_network_forward(net, x.as_ptr(), 3, y.as_mut_ptr(), 2) };
    assert_eq!(y.to_vec(), original.output(&x).unwrap());
    unsafe { rr_network_free(net) };
}

fn header_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/relu_regions.h")
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(header_path()).expect("build script writes the header");
    for symbol in [
        "typedef struct RrNetwork RrNetwork;",
        "typedef struct RrBoundReport RrBoundReport;",
        "RR_STATUS_OK = 0",
        "RR_STATUS_PANIC = 8",
        "rr_last_error_message(void)",
        "rr_network_load(",
        "rr_network_from_json(",
        "rr_network_random(",
        "rr_network_free(",
        "rr_network_forward(",
        "rr_local_region_bound(",
        "rr_report_c(",
        "rr_report_s_counts(",
        "rr_report_free(",
        "rr_check_soundness(",
        "rr_segment_piece_count(",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

/// Compiles `tests/c/smoke.c` against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
    else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    // target/<profile>/deps/<test binary> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("librelu_regions_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with("C=0 C_wide=1 pieces=2 mismatch=3 msg=input shape mismatch"), "{stdout}");
}
