use dualsup::evaluator::{gold_facts, micro_f1};
use dualsup::model::Model;
use dualsup::synth_data::{
    ds_label, generate, ha_label, read_dataset, read_kb, write_dataset, write_kb, Corpus, Dataset, GenConfig,
    SynthDocument,
};
use dualsup::trainer::{predict, train, Mode, Optimizer, TrainConfig, TrainData};
use dualsup::types::Task;

fn labeled(docs: &[SynthDocument], f: impl Fn(&SynthDocument) -> Vec<dualsup::synth_data::LabeledExample>) -> Dataset {
    Dataset {
        documents: docs.to_vec(),
        examples: docs.iter().flat_map(f).collect(),
    }
}

fn small_corpus(seed: u64) -> Corpus {
    let mut g = GenConfig::unbiased(60, 6, 90, seed).with_inflation_range(0.5, 4.0).unwrap();
    g.n_train_ha = 60;
    g.n_train_ds = 120;
    g.n_dev = 30;
    g.n_test = 40;
    generate(&g).unwrap()
}

struct Splits {
    ha: Dataset,
    ds: Dataset,
    dev: Dataset,
    test: Dataset,
}

fn splits(c: &Corpus, task: Task) -> Splits {
    Splits {
        ha: labeled(&c.train_ha, |d| ha_label(d, task)),
        ds: labeled(&c.train_ds, |d| ds_label(d, &c.kb, task)),
        dev: labeled(&c.dev, |d| ha_label(d, task)),
        test: labeled(&c.test, |d| ha_label(d, task)),
    }
}

fn cfg(mode: Mode, task: Task) -> TrainConfig {
    let mut c = TrainConfig::full_scale(task);
    c.mode = mode;
    c.lambda = 0.1;
    c.hidden = 6;
    c.attention_width = None;
    c.sanity_bound = 0.1;
    c.optimizer = Optimizer::adam(0.02);
    c.batch_size = 16;
    c.epochs = 3;
    c.seed = 4;
    c
}

#[test]
fn dataset_and_kb_survive_the_file_round_trip() {
    let c = small_corpus(1);
    let dir = tempfile::tempdir().unwrap();
    let s = splits(&c, Task::Document);
    let p = dir.path().join("ds.jsonl");
    write_dataset(&p, &s.ds).unwrap();
    assert_eq!(read_dataset(&p).unwrap(), s.ds);
    let k = dir.path().join("kb.jsonl");
    write_kb(&k, &c.kb).unwrap();
    assert_eq!(read_kb(&k).unwrap(), c.kb);
}

#[test]
fn trained_model_beats_chance_and_reloads_identically() {
    let c = small_corpus(2);
    let s = splits(&c, Task::Document);
    let data = TrainData {
        ha: &s.ha,
        ds: &s.ds,
        dev: Some(&s.dev),
        vocab_size: GenConfig::unbiased(60, 6, 90, 2).vocab_size(),
        n_relations: 6,
    };
    let (model, hist) = train(&cfg(Mode::Dual, Task::Document), &data).unwrap();
    assert_eq!(hist.epochs.len(), 3);
    assert!(hist.epochs.iter().all(|e| e.loss_ha.is_finite() && e.loss_penalty.is_finite()));

    let gold = gold_facts(&s.test.examples);
    let f1 = micro_f1(&predict(&model, &s.test).unwrap(), &gold).f1;
    assert!(f1 > 0.3, "test F1 {f1}");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    model.save(&p).unwrap();
    let back = Model::load(&p).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.score_dataset(&s.test).unwrap(), model.score_dataset(&s.test).unwrap());
}

#[test]
fn training_is_deterministic_and_sentence_task_runs() {
    let c = small_corpus(3);
    let s = splits(&c, Task::Sentence);
    let data = TrainData {
        ha: &s.ha,
        ds: &s.ds,
        dev: Some(&s.dev),
        vocab_size: GenConfig::unbiased(60, 6, 90, 3).vocab_size(),
        n_relations: 6,
    };
    for mode in Mode::ALL {
        let a = train(&cfg(mode, Task::Sentence), &data).unwrap();
        let b = train(&cfg(mode, Task::Sentence), &data).unwrap();
        assert_eq!(a.0, b.0, "{mode}");
        assert_eq!(a.1.epochs.len(), 3);
    }
}
