use std::io::Cursor;

use ndarray::{array, Array2};
use stressorlens_core::corpus::{clean, map_flair, read_corpus, read_clean_jsonl, write_clean_jsonl, CleanPost, FlairGroup, FlairSource, RawPost};
use stressorlens_core::flairclf::{
    impute_flairs, predict, predict_proba, select_support_subset, train, weight_norm, FlairError, LogRegModel,
    TrainConfig, CLASSES,
};
use stressorlens_core::lexicon::{annotate_corpus, default_lexicon, match_post};

fn raw(id: &str, title: &str, body: &str, flair: Option<&str>) -> RawPost {
    RawPost {
        id: id.into(),
        created_utc: 1_590_000_000,
        title: title.into(),
        body: body.into(),
        flair: flair.map(String::from),
        permalink: None,
    }
}

#[test]
fn reader_skips_duplicates_and_broken_lines() {
    let line = |id: &str| format!(r#"{{"id":"{id}","created_utc":1590000000,"title":"t","selftext":"b"}}"#);
    let text = [line("a"), line("b"), line("a"), r#"{"id": "c", "created_utc": "#.to_string(), line("d")].join("\n");
    let loaded = read_corpus(Cursor::new(text)).unwrap();
    let ids: Vec<&str> = loaded.posts.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "d"]);
    assert_eq!((loaded.warnings.duplicates, loaded.warnings.malformed), (1, 1));
}

#[test]
fn cleaning_drops_tombstones() {
    let posts = [
        raw("1", "Scared", "[removed]", Some("Support")),
        raw("2", "help", "", None),
        raw("3", "Rant", "[deleted]", None),
        raw("4", "Lost my job", "rent is due", Some("news")),
        raw("5", "Zoom", "class again", Some("Trigger Warning")),
    ];
    let cleaned = clean(&posts);
    let ids: Vec<&str> = cleaned.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["2", "4", "5"]);
    assert_eq!(cleaned[0].text, "help");
    assert_eq!(cleaned[0].flair_source, FlairSource::Unlabelled);

    let mut buf = Vec::new();
    write_clean_jsonl(&mut buf, &cleaned).unwrap();
    assert_eq!(read_clean_jsonl(Cursor::new(buf)).unwrap(), cleaned);
}

#[test]
fn flairs_map_onto_groups() {
    assert_eq!(map_flair(Some("Trigger Warning")), FlairGroup::MentalHealthSupport);
    assert_eq!(map_flair(Some("news")), FlairGroup::NewsResources);
    assert_eq!(map_flair(Some("Vaccines   are SAFE")), FlairGroup::DiscussionQuestions);
    assert_eq!(map_flair(Some("The answer is NO")), FlairGroup::Other);
    assert_eq!(map_flair(Some("Memes")), FlairGroup::Unlabelled);
    assert_eq!(map_flair(None), FlairGroup::Unlabelled);
}

#[test]
fn lexicon_labels_posts() {
    let lex = default_lexicon();
    let labels = |t: &str| match_post(t, &lex).into_iter().collect::<Vec<_>>();
    assert_eq!(labels("people maskless at the grocery store"), ["Fear of coronavirus"]);
    assert_eq!(labels("will we ever get back to normal"), ["Pandemic Development"]);
    assert!(labels("").is_empty());
    assert!(labels("will we ever get back to the normal").is_empty());
    let both = labels("online learning every day and I feel so lonely");
    assert!(both.contains(&"Education Problems".to_string()) && both.contains(&"Lonely".to_string()), "{both:?}");

    let notes = annotate_corpus([("x", "a quiet afternoon")], &lex);
    assert_eq!(notes.len(), 1);
    assert!(notes[0].topics.is_empty());
}

fn model_from(weights: Array2<f64>) -> LogRegModel {
    LogRegModel {
        classes: CLASSES.to_vec(),
        weights,
        train_config: TrainConfig::default(),
        loss_trace: Vec::new(),
    }
}

#[test]
fn probabilities_are_a_softmax() {
    let zero = model_from(Array2::zeros((4, 3)));
    assert_eq!(predict_proba(&zero, &[0.3, 0.1]).unwrap(), vec![0.25; 4]);

    let w = array![[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, -0.5]];
    let x = [0.4, 0.3];
    let scores = [0.4 + 0.5, 0.6, -0.4 + 0.3, -0.5];
    let total: f64 = scores.iter().map(|s: &f64| s.exp()).sum();
    let got = predict_proba(&model_from(w), &x).unwrap();
    for (p, s) in got.iter().zip(scores) {
        assert!((p - s.exp() / total).abs() <= 1e-12);
    }
    assert!(matches!(predict_proba(&zero, &[1.0]), Err(FlairError::Dimension(_))));
}

#[test]
fn training_rules() {
    let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [0.1, 1.0]];
    let one_class = [FlairGroup::Experience; 4];
    assert!(matches!(train(&x, &one_class, &TrainConfig::default()), Err(FlairError::SingleClass(1))));

    let labels = [
        FlairGroup::MentalHealthSupport,
        FlairGroup::NewsResources,
        FlairGroup::MentalHealthSupport,
        FlairGroup::NewsResources,
    ];
    let weak = train(&x, &labels, &TrainConfig { l2: 0.1, ..TrainConfig::default() }).unwrap();
    let strong = train(&x, &labels, &TrainConfig { l2: 1.0, ..TrainConfig::default() }).unwrap();
    assert!(weight_norm(&strong) < weight_norm(&weak));
    assert_eq!(predict(&weak, &[1.0, 0.0]).unwrap(), FlairGroup::MentalHealthSupport);

    let wild = TrainConfig { learning_rate: 1e300, ..TrainConfig::default() };
    assert!(matches!(train(&(x * 1e10), &labels, &wild), Err(FlairError::Diverged { .. })));
}

fn post(id: &str, group: FlairGroup) -> CleanPost {
    let raw = raw(id, "t", "b", None);
    CleanPost {
        flair_group: group,
        flair_source: if group == FlairGroup::Unlabelled { FlairSource::Unlabelled } else { FlairSource::Labelled },
        ..clean(&[raw]).remove(0)
    }
}

#[test]
fn imputation_then_subset() {
    // class c fires on feature c
    let mut w = Array2::zeros((4, 5));
    for c in 0..4 {
        w[[c, c]] = 5.0;
    }
    let model = model_from(w);
    let posts = vec![
        post("a", FlairGroup::Experience),
        post("b", FlairGroup::Unlabelled),
        post("c", FlairGroup::Unlabelled),
        post("d", FlairGroup::Unlabelled),
    ];
    let features = array![[0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.9, 0.0, 0.0, 0.0]];
    assert!(matches!(select_support_subset(&posts), Err(FlairError::Unlabelled(_))));
    let imputed = impute_flairs(&posts, &model, &features).unwrap();
    assert_eq!(imputed[0], posts[0]);
    let groups: Vec<FlairGroup> = imputed[1..].iter().map(|p| p.flair_group).collect();
    assert_eq!(groups, [FlairGroup::MentalHealthSupport, FlairGroup::DiscussionQuestions, FlairGroup::MentalHealthSupport]);
    assert!(imputed[1..].iter().all(|p| p.flair_source == FlairSource::Predicted));

    let subset = select_support_subset(&imputed).unwrap();
    let ids: Vec<&str> = subset.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["b", "d"]);

    let labelled: Vec<CleanPost> = posts[..1].to_vec();
    assert_eq!(impute_flairs(&labelled, &model, &features.slice(ndarray::s![..1, ..]).to_owned()).unwrap(), labelled);
}
