//! Golden-file check: the seeded toy backbone must produce bit-identical
//! MASK outputs across runs and builds. Regenerate the recorded output with
//! `PROMPT_PET_BLESS=1 cargo test --test golden` after an intentional
//! change to the toy architecture or initialization.

use std::path::PathBuf;

use prompt_pet::backbone::{make_toy_backbone, BackboneConfig, Vocab};
use prompt_pet::corpus::{Example, Task};
use prompt_pet::nn::{randn, seeded_rng};
use prompt_pet::templates::{build_vary_soft_family, render};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_mask_output.json")
}

#[test]
fn toy_mask_output_matches_recorded_bits() {
    let vocab = Vocab::build(
        ["alpha beta gamma delta epsilon zeta", "Category:"],
        &[],
        64,
    )
    .unwrap();
    let cfg = BackboneConfig::toy(16, 32, 64, 7);
    let lm = make_toy_backbone(&cfg, vocab).unwrap();
    let family = build_vary_soft_family(Task::TC, &[2]).unwrap();
    let e = Example {
        id: 0,
        text_a: "alpha gamma zeta beta".into(),
        text_b: None,
        label: None,
    };
    let r = render(&family[0], &e, None, &[], 32).unwrap();
    let soft = randn(&mut seeded_rng(5), 2, 16, 0.1);
    let out = lm.encode_masked(&r, &soft).unwrap();

    let bits = serde_json::json!({
        "mask_hidden": out.mask_hidden.iter().map(|x| x.to_bits()).collect::<Vec<u64>>(),
        "mask_logits": out.mask_logits.iter().map(|x| x.to_bits()).collect::<Vec<u64>>(),
    });

    let path = golden_path();
    if std::env::var_os("PROMPT_PET_BLESS").is_some() || !path.exists() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&bits).unwrap()).unwrap();
        if std::env::var_os("PROMPT_PET_BLESS").is_some() {
            return;
        }
    }
    let recorded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(
        bits, recorded,
        "toy backbone output drifted from {}",
        path.display()
    );

    // A reloaded checkpoint reproduces the same bits.
    let dir = tempfile::tempdir().unwrap();
    lm.save(dir.path()).unwrap();
    let reloaded = prompt_pet::backbone::MaskedLm::load(dir.path()).unwrap();
    let out2 = reloaded.encode_masked(&r, &soft).unwrap();
    assert_eq!(
        out.mask_logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        out2.mask_logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}
