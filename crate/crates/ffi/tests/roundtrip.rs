use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use crossrec::baselines::BaselineKind;
use crossrec::cli::{save_artifact, RunConfig, MODEL_KIND};
use crossrec::dataio::ingest;
use crossrec::eval::Recommender;
use crossrec::numcore::TrainConfig;
use crossrec::pipeline::{run_experiment, Experiment, ModelSpec};
use crossrec::recmodels::ModelConfig;
use crossrec::synth::{write_synth, SynthConfig};
use crossrec_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe { cr_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn experiment(model: ModelSpec) -> Experiment {
    Experiment { model, ..Default::default() }
}

#[test]
fn scores_through_c_abi_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synth(&SynthConfig { n_users: 300, seed: 11, ..Default::default() }, &data).unwrap();
    let dataset = ingest(&crossrec::dataio::DatasetPaths::in_dir(&data)).unwrap();

    let train = TrainConfig { hidden_units: 4, max_epochs: 2, ..Default::default() };
    let specs = [
        ModelSpec::Cross(ModelConfig { train, ..Default::default() }),
        ModelSpec::Baseline { kind: BaselineKind::Sknn, config: Default::default() },
    ];
    let c_data = cstr(&data);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { cr_dataset_load(c_data.as_ptr(), ptr::null(), &mut handle) }, CrStatus::Ok, "{}", last_error());
    let n = unsafe { cr_dataset_n_items(handle) };
    assert_eq!(n, dataset.catalog.len());
    assert_eq!(unsafe { cr_dataset_n_users(handle) }, dataset.users.len());

    for spec in specs {
        let exp = experiment(spec);
        let outcome = run_experiment(&exp, &dataset).unwrap();
        let ckpt = dir.path().join(format!("{}.json", exp.model.name()));
        let cfg = RunConfig { experiment: exp, ..Default::default() };
        save_artifact(&ckpt, MODEL_KIND, &cfg, &outcome.model).unwrap();

        let c_ckpt = cstr(&ckpt);
        let mut model = ptr::null_mut();
        assert_eq!(unsafe { cr_model_load(c_ckpt.as_ptr(), &mut model) }, CrStatus::Ok, "{}", last_error());
        assert_eq!(unsafe { cr_model_n_items(model) }, n);

        for case in outcome.cases.test.iter().take(20) {
            let user = CString::new(case.user()).unwrap();
            let mut scores = vec![0.0; n];
            let status = unsafe {
                cr_model_score(model, handle, user.as_ptr(), case.task.purchase.time, scores.as_mut_ptr(), n)
            };
            assert_eq!(status, CrStatus::Ok, "{}", last_error());
            let expected = outcome.model.score(case).unwrap();
            for (a, b) in scores.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "{} {a} vs {b}", case.user());
            }
            let mut mask = vec![0u8; n];
            let status =
                unsafe { cr_eligibility(handle, user.as_ptr(), case.task.purchase.time, mask.as_mut_ptr(), n) };
            assert_eq!(status, CrStatus::Ok);
            let elig = crossrec::dataio::eligibility_mask(&case.portfolio, &dataset.catalog);
            assert_eq!(mask, elig.iter().map(|&e| u8::from(e)).collect::<Vec<_>>());
        }

        let mut short = vec![0.0; n - 1];
        let user = CString::new(outcome.cases.test[0].user()).unwrap();
        let status = unsafe { cr_model_score(model, handle, user.as_ptr(), i64::MAX, short.as_mut_ptr(), n - 1) };
        assert_eq!(status, CrStatus::BufferTooSmall);
        let nobody = CString::new("nobody").unwrap();
        let mut scores = vec![0.0; n];
        let status = unsafe { cr_model_score(model, handle, nobody.as_ptr(), 0, scores.as_mut_ptr(), n) };
        assert_eq!(status, CrStatus::InvalidArgument);
        assert!(last_error().contains("nobody"));
        unsafe { cr_model_free(model) };
    }
    unsafe { cr_dataset_free(handle) };
}

#[test]
fn wrong_artifact_kind_is_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    save_artifact(&p, "numbers", &RunConfig::default(), &vec![1, 2]).unwrap();
    let c = cstr(&p);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cr_model_load(c.as_ptr(), &mut model) }, CrStatus::Checkpoint);
    assert!(model.is_null());
}

/// The generated header compiles as C and as C++ when a compiler is present.
#[test]
fn header_compiles() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let include = root.join("include");
    let smoke = root.join("examples/smoke.c");
    let out = tempfile::tempdir().unwrap();
    let header = include.join("crossrec.h");
    for (cc, lang, src) in [("cc", "c", &smoke), ("c++", "c++", &header)] {
        let Ok(status) = Command::new(cc)
            .args(["-x", lang, "-fsyntax-only", "-Wall", "-Wextra", "-Werror", "-I"])
            .arg(&include)
            .arg(src)
            .current_dir(out.path())
            .status()
        else {
            eprintln!("{cc} not found; skipping");
            continue;
        };
        assert!(status.success(), "{cc} rejected the header");
    }
}
