//! Synthetic corpus: captions, templated answers, vocabulary closure, resolutions.

use std::collections::BTreeSet;

use vora::data::dump::dump_dataset;
use vora::data::scene::{ShapeKind, PALETTE};
use vora::data::{batch_at, gen_image_caption, gen_text_sample, pack, DataConfig, Modality, Vocab, EOS, IMG};

/// Caption rebuilt from the scene graph through vocabulary ids rather than strings.
fn caption_via_ids(scene: &vora::data::Scene) -> String {
    let v = Vocab::standard();
    let id = |w: &str| v.id(w).unwrap();
    let colors = ["red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"];
    let mut ids = Vec::new();
    for (i, s) in scene.shapes.iter().enumerate() {
        if i > 0 {
            ids.push(id("and"));
        }
        ids.push(id("a"));
        ids.push(id(if s.big { "big" } else { "small" }));
        ids.push(id(colors[s.color]));
        ids.push(id(match s.kind {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }));
        ids.push(id(if s.cell < 2 { "top" } else { "bottom" }));
        ids.push(id(if s.cell % 2 == 0 { "left" } else { "right" }));
    }
    v.decode(&ids).unwrap()
}

#[test]
fn captions_agree_with_an_independent_builder() {
    for seed in 0..500 {
        let s = gen_image_caption(seed, (32, 32)).unwrap();
        let scene = s.scene.as_ref().unwrap();
        let want = caption_via_ids(scene);
        assert_eq!(scene.caption(), want, "seed {seed}");
        assert_eq!(Vocab::standard().decode(&s.answer_tokens).unwrap(), want);
    }
}

#[test]
fn each_quadrant_shows_only_its_shape_color() {
    for seed in 0..200 {
        let s = gen_image_caption(seed, (32, 48)).unwrap();
        let scene = s.scene.as_ref().unwrap();
        let img = s.image.as_ref().unwrap();
        for cell in 0..4 {
            let (y0, x0) = ((cell / 2) * 16, (cell % 2) * 24);
            let mut colors = BTreeSet::new();
            for y in y0..y0 + 16 {
                for x in x0..x0 + 24 {
                    colors.insert(img.pixel(y, x).map(|c| (c * 255.0).round() as u8));
                }
            }
            colors.remove(&[0, 0, 0]);
            let want: BTreeSet<[u8; 3]> = scene
                .shapes
                .iter()
                .filter(|sh| sh.cell == cell)
                .map(|sh| PALETTE[sh.color])
                .collect();
            assert_eq!(colors, want, "seed {seed} cell {cell}");
        }
    }
}

/// Evaluates a templated prompt directly from its words.
fn evaluate(prompt: &str) -> String {
    let w: Vec<&str> = prompt.split_whitespace().collect();
    match w.as_slice() {
        ["what", "is", a, op, b] => {
            let (a, b): (i64, i64) = (a.parse().unwrap(), b.parse().unwrap());
            match *op {
                "plus" => a + b,
                "minus" => a - b,
                "times" => a * b,
                other => panic!("unknown operator {other}"),
            }
            .to_string()
        }
        ["repeat:", rest @ ..] => rest.join(" "),
        ["reverse:", rest @ ..] => rest.iter().rev().copied().collect::<Vec<_>>().join(" "),
        _ => panic!("unknown template: {prompt}"),
    }
}

#[test]
fn templated_answers_match_direct_evaluation() {
    let v = Vocab::standard();
    let mut kinds = BTreeSet::new();
    for seed in 0..1000 {
        let s = gen_text_sample(seed).unwrap();
        assert_eq!(s.modality, Modality::TextOnly);
        let prompt = v.decode(&s.prompt_tokens).unwrap();
        let answer = v.decode(&s.answer_tokens).unwrap();
        assert_eq!(answer, evaluate(&prompt), "seed {seed}: {prompt}");
        kinds.insert(prompt.split_whitespace().take(3).last().unwrap_or("").to_string());
    }
    assert!(kinds.len() >= 5, "{kinds:?}");
}

#[test]
fn ten_thousand_samples_stay_inside_the_vocabulary() {
    let v = Vocab::standard();
    let cfg = DataConfig {
        anyres: true,
        ..DataConfig::default()
    };
    let mut n = 0;
    for index in 0..625 {
        for p in batch_at(17, index, 16, &cfg).unwrap() {
            assert!(p.tokens.iter().all(|&t| t < v.len()));
            assert_eq!(*p.tokens.last().unwrap(), EOS);
            assert!(p.tokens[..p.layout.vision.end].iter().all(|&t| t == IMG));
            let text = v.decode(&p.tokens[p.layout.text.clone()]).unwrap();
            assert_eq!(v.encode(&text).unwrap(), strip_control(&p.tokens[p.layout.text.clone()]));
            n += 1;
        }
    }
    assert_eq!(n, 10_000);
}

fn strip_control(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&t| t > IMG).collect()
}

#[test]
fn anyres_draws_many_resolutions_with_matching_token_counts() {
    let cfg = DataConfig {
        anyres: true,
        image_fraction: 1.0,
        ..DataConfig::default()
    };
    let mut seen = BTreeSet::new();
    for index in 0..20 {
        for p in batch_at(3, index, 8, &cfg).unwrap() {
            let img = p.image.as_ref().unwrap();
            assert_eq!(img.height % 8, 0);
            assert_eq!(img.width % 8, 0);
            assert!((16..=48).contains(&img.height) && (16..=48).contains(&img.width));
            assert_eq!(p.layout.vision_len(), (img.height / 8) * (img.width / 8));
            seen.insert((img.height, img.width));
        }
    }
    assert!(seen.len() >= 15, "only {} distinct resolutions", seen.len());
}

#[test]
fn batches_are_a_pure_function_of_seed_and_index() {
    let cfg = DataConfig::default();
    assert_eq!(batch_at(5, 9, 8, &cfg).unwrap(), batch_at(5, 9, 8, &cfg).unwrap());
    assert_ne!(batch_at(5, 9, 8, &cfg).unwrap(), batch_at(5, 10, 8, &cfg).unwrap());
    let b = batch_at(5, 9, 16, &cfg).unwrap();
    let images = b.iter().filter(|p| p.image.is_some()).count();
    assert_eq!(images, 13);
    assert!(b[..images].iter().all(|p| p.image.is_some()));
}

#[test]
fn packing_places_supervision_at_the_answer() {
    let s = gen_image_caption(4, (16, 24)).unwrap();
    let p = pack(&s, 8).unwrap();
    assert_eq!(p.layout.vision, 0..6);
    assert_eq!(p.prompt(), s.prompt_tokens.as_slice());
    assert_eq!(&p.target()[..s.answer_tokens.len()], s.answer_tokens.as_slice());
    assert!(pack(&s, 5).is_err());
}

#[test]
fn dump_writes_manifest_and_raw_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig::default();
    let n = dump_dataset(dir.path(), 2, 2, 4, &cfg).unwrap();
    assert_eq!(n, 8);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    let first = &lines[0];
    let file = dir.path().join(first["image_file"].as_str().unwrap());
    let bytes = std::fs::read(file).unwrap();
    assert_eq!(bytes.len(), 32 * 32 * 3);
    let replay = batch_at(2, 0, 4, &cfg).unwrap();
    let img = replay[0].image.as_ref().unwrap();
    assert_eq!(bytes[3 * (5 * 32 + 7)], (img.pixel(5, 7)[0] * 255.0).round() as u8);
}
