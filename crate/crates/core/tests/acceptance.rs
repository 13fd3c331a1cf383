//! Acceptance gate: one test per numbered criterion, each printing its own
//! scorecard line. Run `cargo test --test acceptance -- --nocapture` to see
//! every "[acceptance] C<N> PASS" line; a failing criterion prints FAIL and
//! then panics with the underlying assertion.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::{Duration, Instant};

use taxograft_core::euler::{euler_tour, euler_tour_excluding};
use taxograft_core::llm::http::HttpBackend;
use taxograft_core::llm::mock::{OracleBackend, ScriptBackend};
use taxograft_core::llm::{average_logprob, CompletionBackend, CompletionRequest, EndpointConfig};
use taxograft_core::rank::{chunk, rank_candidates, Chunk, RankedCandidate};
use taxograft_core::scorer::{
    dynamic_margin, joint_loss, joint_loss_and_gradient, margin_loss, negative_consistency_loss,
    positive_consistency_loss, sample_training_data, train, ScorerModel,
};
use taxograft_core::synthetic::{benchmark_split, random_tree};
use taxograft_core::verbalize::verbalize;
use taxograft_core::{
    accuracy, expand_all, expand_query, hit_at_k, load_taxonomy, render_filter_prompt,
    render_retriever_prompt, render_verifier_prompt, trace_backend_requests, wu_palmer,
    PipelineConfig, Prediction, PredictionStatus, Stage, Taxonomy, TraceEvent,
};

fn criterion<F>(n: u32, budget: Option<Duration>, body: F)
where
    F: FnOnce() + UnwindSafe,
{
    let started = Instant::now();
    match catch_unwind(body) {
        Ok(()) => {
            let elapsed = started.elapsed();
            if let Some(limit) = budget {
                if elapsed > limit {
                    println!("[acceptance] C{n} FAIL (ran {elapsed:.2?}, budget {limit:?})");
                    panic!("criterion C{n} exceeded its runtime budget");
                }
            }
            println!("[acceptance] C{n} PASS");
        }
        Err(cause) => {
            println!("[acceptance] C{n} FAIL");
            resume_unwind(cause);
        }
    }
}

fn build(pairs: &[(&str, &str)]) -> Taxonomy {
    let records: Vec<(String, String)> =
        pairs.iter().map(|(c, p)| (c.to_string(), p.to_string())).collect();
    Taxonomy::from_edge_records(&records, &[]).unwrap()
}

fn water_fixture() -> Taxonomy {
    build(&[
        ("pollution", "environment"),
        ("air pollution", "pollution"),
        ("soil pollution", "pollution"),
        ("water pollution", "pollution"),
        ("marine pollution", "water pollution"),
        ("chemical pollution", "water pollution"),
    ])
}

fn zero_model() -> ScorerModel {
    ScorerModel::new(1 << 10, 0)
}

// C1: the anchor's lineage walk and its verbalization against frozen texts.
#[test]
fn c1_lineage_walk_and_verbalization_goldens() {
    criterion(1, Some(Duration::from_secs(1)), || {
        let t = water_fixture();
        let tour = euler_tour(&t, t.require("water pollution").unwrap());
        let names: Vec<&str> = tour.nodes().map(|n| t.name(n)).collect();
        assert_eq!(
            names,
            [
                "water pollution",
                "pollution",
                "environment",
                "pollution",
                "air pollution",
                "pollution",
                "soil pollution",
                "pollution",
                "water pollution",
                "marine pollution",
                "water pollution",
                "chemical pollution",
            ],
            "lineage walk must visit exactly these 12 entries in order"
        );
        let rendered = verbalize(&tour, &t);
        assert_eq!(rendered.text, include_str!("golden/verbalized_lineage_bare.txt"));
    });
}

// C2: the three stage prompts against frozen texts, from the fixture alone.
#[test]
fn c2_stage_prompt_goldens() {
    criterion(2, Some(Duration::from_secs(1)), || {
        let dir = std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"));
        let t = load_taxonomy(&dir.join("arctic.edges.tsv"), Some(&dir.join("arctic.defs.tsv")))
            .unwrap();
        let query = "Arctic Ocean";
        let query_def = "The Arctic Ocean is the smallest and shallowest of the world's oceans.";
        let order = ["geophysical environment", "ocean", "wild mammal", "animal life", "climatic zone"];
        let batch = Chunk {
            query: query.to_string(),
            index: 0,
            members: order.iter().map(|n| t.require(n).unwrap()).collect(),
            scores: vec![0.0; order.len()],
        };
        let filter = render_filter_prompt(query, &batch, &t);
        assert_eq!(filter.text, include_str!("golden/prompt2.txt"));

        let retriever = render_retriever_prompt(query, query_def, &batch, &t);
        assert_eq!(retriever.text, include_str!("golden/prompt3.txt"));

        let defs: Vec<(String, String)> = batch
            .members
            .iter()
            .map(|&m| (t.name(m).to_string(), t.definition(m).unwrap_or_default().to_string()))
            .collect();
        let verifier = render_verifier_prompt(
            &retriever.path_strings[1],
            &retriever.path_strings,
            &defs,
            query_def,
            &t,
        );
        assert_eq!(verifier.text, include_str!("golden/prompt4.txt"));
    });
}

// C3: loss zero/positive cases, then analytic gradients against central
// finite differences on 200 randomized taxonomy fixtures.
#[test]
fn c3_loss_values_and_gradient_checks() {
    criterion(3, Some(Duration::from_secs(10)), || {
        // a model whose score is exactly the weight of a one-token text
        let mut m = ScorerModel::new(1 << 8, 0);
        let dim_of = |text: &str| {
            taxograft_core::features::featurize(text, 1 << 8).entries()[0].0 as usize
        };
        let (x, y, z) = (dim_of("x"), dim_of("y"), dim_of("z"));
        assert!(x != y && y != z && x != z, "probe tokens must not collide");
        m.weights[x] = 1.0;
        m.weights[y] = 0.5;
        m.weights[z] = 0.3;

        // hinge inactive: f(P)=1.0, f(P')=0.5, margin 0.2
        assert_eq!(margin_loss(&m, &["x"], &["y"], &[0.2]), 0.0);
        // hinge active: f(P)=0.3, f(P')=0.5, margin 0.2 → 0.4
        assert!((margin_loss(&m, &["z"], &["y"], &[0.2]) - 0.4).abs() < 1e-12);
        // consistency zeros at their optima, positive off them
        assert_eq!(positive_consistency_loss(&m, &[("x", "x")]), 0.0);
        assert!((positive_consistency_loss(&m, &[("x", "y")]) - 0.25).abs() < 1e-12);
        assert_eq!(negative_consistency_loss(&m, &[("y", "x")]), 0.0);
        assert!((negative_consistency_loss(&m, &[("x", "y")]) - 0.5).abs() < 1e-12);

        let mut checked = 0usize;
        for i in 0..200u64 {
            let skeleton = random_tree(5 + (i as usize) % 12, 1_000 + i);
            let defs: Vec<(String, String)> = skeleton
                .node_ids()
                .map(|id| (skeleton.name(id).to_string(), format!("meaning of {}", skeleton.name(id))))
                .collect();
            let t = Taxonomy::from_edge_records(&skeleton.edge_records(), &defs).unwrap();
            let samples = sample_training_data(&t, 2, i).unwrap();
            let sample = &samples[(i as usize) % samples.len()];

            let mut m = ScorerModel::new(1 << 8, i);
            for (j, w) in m.weights.iter_mut().enumerate() {
                *w = (((j as i64 * 7 + i as i64) % 23) - 11) as f64 * 0.017;
            }
            // joint loss collapses to the margin term when both λ are zero
            let mut margin_only = m.clone();
            margin_only.lambda_pos = 0.0;
            margin_only.lambda_neg = 0.0;
            let positives: Vec<&str> =
                sample.negatives.iter().map(|_| sample.positive.with_query.as_str()).collect();
            let negatives: Vec<&str> =
                sample.negatives.iter().map(|n| n.with_query.as_str()).collect();
            let margins: Vec<f64> = sample
                .negatives
                .iter()
                .map(|n| dynamic_margin(&sample.positive.path, &n.path, m.margin_scale).unwrap())
                .collect();
            let expected = margin_loss(&margin_only, &positives, &negatives, &margins);
            assert!((joint_loss(&margin_only, sample) - expected).abs() < 1e-9);

            let (loss, grad) = joint_loss_and_gradient(&m, sample);
            assert!(loss >= 0.0);
            for &(idx, g) in grad.iter().take(6) {
                let h = 1e-5;
                let mut up = m.clone();
                up.weights[idx as usize] += h;
                let mut down = m.clone();
                down.weights[idx as usize] -= h;
                let numeric = (joint_loss(&up, sample) - joint_loss(&down, sample)) / (2.0 * h);
                let err = (g - numeric).abs();
                assert!(
                    err <= 1e-4 * g.abs().max(numeric.abs()) || err <= 1e-7,
                    "fixture {i} coordinate {idx}: analytic {g} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 200, "gradient sweep must cover at least 200 coordinates");
    });
}

// C4: dissimilarity-proportional margin identities and the hand-worked case.
#[test]
fn c4_dynamic_margin_suite() {
    criterion(4, None, || {
        let t = build(&[
            ("pollution", "environment"),
            ("water pollution", "pollution"),
            ("air pollution", "pollution"),
        ]);
        let water = t.require("water pollution").unwrap();
        let air = t.require("air pollution").unwrap();
        // node sets {water pollution, pollution, environment} vs the air twin
        let p = euler_tour_excluding(&t, water, Some(air));
        let q = euler_tour_excluding(&t, air, Some(water));
        assert_eq!(p.node_set().len(), 3);
        let gamma = dynamic_margin(&p, &q, 0.2).unwrap();
        assert!((gamma - 0.2).abs() <= 1e-12, "(4/2 − 1)·0.2 must be 0.2, got {gamma}");
        assert_eq!(dynamic_margin(&p, &p, 0.2).unwrap(), 0.0);

        for seed in 0..20u64 {
            let t = random_tree(12, seed);
            let ids: Vec<_> = t.node_ids().collect();
            let a = euler_tour(&t, ids[(seed as usize * 5 + 1) % ids.len()]);
            let b = euler_tour(&t, ids[(seed as usize * 3 + 7) % ids.len()]);
            let ab = dynamic_margin(&a, &b, 0.2).unwrap();
            let ba = dynamic_margin(&b, &a, 0.2).unwrap();
            assert_eq!(ab, ba, "margin must be symmetric");
            assert!(ab >= 0.0);
            assert_eq!(dynamic_margin(&a, &a, 0.2).unwrap(), 0.0);
        }
    });
}

// C5: similarity and ancestor helpers against brute-force oracles, Hit@k
// monotonicity, and the accuracy ≤ similarity bound on random reports.
#[test]
fn c5_metric_oracle_equivalence() {
    criterion(5, Some(Duration::from_secs(5)), || {
        let brute_lca = |t: &Taxonomy, a, b| {
            let up_a = t.path_to_root(a);
            let up_b: BTreeSet<_> = t.path_to_root(b).into_iter().collect();
            *up_a.iter().find(|n| up_b.contains(n)).unwrap()
        };

        let mut instances = 0usize;
        let mut seed = 0u64;
        while instances < 500 {
            let t = random_tree(2 + (seed as usize % 30), seed);
            let ids: Vec<_> = t.node_ids().collect();
            for pair in 0..10 {
                let a = ids[(seed as usize + pair * 13) % ids.len()];
                let b = ids[(seed as usize * 3 + pair * 29 + 1) % ids.len()];
                let expected = brute_lca(&t, a, b);
                assert_eq!(t.lca(a, b), expected, "ancestor mismatch on seed {seed}");

                let pred = vec![Some(t.name(a).to_string())];
                let gold = vec![Some(t.name(b).to_string())];
                let got = wu_palmer(&pred, &gold, &t).unwrap();
                let want = 2.0 * t.depth(expected) as f64
                    / (t.depth(a) as f64 + t.depth(b) as f64);
                assert!((got - want).abs() < 1e-12, "similarity mismatch on seed {seed}");
                assert!((0.0..=1.0).contains(&got));
                assert_eq!(got == 1.0, t.name(a) == t.name(b));
                instances += 1;
            }
            seed += 1;
        }

        // Hit@k is monotone in k
        let names = ["n1", "n2", "n3", "n4", "n5", "n6"];
        let mut rankings = Vec::new();
        let mut gold = Vec::new();
        for i in 0..24usize {
            let mut row: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            row.rotate_left(i % names.len());
            rankings.push(row);
            gold.push(format!("n{}", i % 7 + 1)); // n7 never appears: some misses
        }
        let mut prev = 0.0;
        for k in 1..=names.len() {
            let h = hit_at_k(&rankings, &gold, k).unwrap();
            assert!(h >= prev, "Hit@{k} dropped below Hit@{}", k - 1);
            prev = h;
        }

        // exact-match accuracy never exceeds the similarity score
        for seed in 0..40u64 {
            let t = random_tree(10, seed);
            let ids: Vec<_> = t.node_ids().collect();
            let mut pred = Vec::new();
            let mut gold = Vec::new();
            for i in 0..12usize {
                let pick = |salt: usize| -> Option<String> {
                    match (seed as usize + i * 7 + salt) % (ids.len() + 2) {
                        j if j < ids.len() => Some(t.name(ids[j]).to_string()),
                        _ => None,
                    }
                };
                pred.push(pick(0));
                gold.push(pick(3));
            }
            let acc = accuracy(&pred, &gold).unwrap();
            let sim = wu_palmer(&pred, &gold, &t).unwrap();
            assert!(acc <= sim + 1e-12, "accuracy {acc} > similarity {sim} on seed {seed}");
        }
    });
}

// C6: the end-to-end synthetic benchmark. Training uses lr 0.05 for 100
// epochs (the library defaults underfit this small corpus; the override is
// part of the experiment, not of the model defaults).
#[test]
fn c6_synthetic_end_to_end() {
    criterion(6, Some(Duration::from_secs(60)), || {
        for seed in [7u64, 8, 9] {
            let (t, queries) = benchmark_split(seed).unwrap();
            assert_eq!(t.len() + queries.len(), 50);
            assert_eq!(t.max_depth(), 5);

            let samples = sample_training_data(&t, 15, seed).unwrap();
            let mut m = ScorerModel::new(1 << 15, seed);
            m.learning_rate = 0.05;
            m.epochs = 100;
            let report = train(&m, &samples).unwrap();
            if seed == 7 {
                let again = train(&m, &samples).unwrap();
                assert_eq!(report.model.weights, again.model.weights, "training must be seeded");
                assert_eq!(report.epoch_losses, again.epoch_losses);
            }

            let mut hits = 0usize;
            let mut gold_rank = Vec::new();
            for q in &queries {
                let ranked = rank_candidates(&report.model, &t, &q.name, &q.definition);
                let gold = q.gold_parent.as_deref().unwrap();
                let pos = ranked.iter().position(|c| t.name(c.node) == gold).unwrap();
                gold_rank.push(pos);
                if pos < 10 {
                    hits += 1;
                }
            }
            let hit10 = hits as f64 / queries.len() as f64;
            assert!(hit10 >= 0.8, "seed {seed}: Hit@10 {hit10} below 0.8, ranks {gold_rank:?}");

            // noiseless oracle run: every query whose gold parent ranks in
            // the first 3 chunks (k=5) must come back exactly right
            let gold_pairs: Vec<(String, String)> = queries
                .iter()
                .map(|q| (q.name.clone(), q.gold_parent.clone().unwrap()))
                .collect();
            let backend = OracleBackend::new(t.clone(), &gold_pairs);
            let inputs: Vec<(String, String, Option<String>)> = queries
                .iter()
                .map(|q| (q.name.clone(), q.definition.clone(), q.gold_parent.clone()))
                .collect();
            let out = expand_all(&inputs, &t, &report.model, &backend, &PipelineConfig::default());
            assert!(out.failures.is_empty());
            for (p, rank) in out.predictions.iter().zip(&gold_rank) {
                if *rank < 15 {
                    assert_eq!(
                        p.predicted.as_deref(),
                        p.gold.as_deref(),
                        "seed {seed}: query {} (gold rank {rank}) must resolve exactly",
                        p.query
                    );
                    assert_eq!(p.status, PredictionStatus::Accepted);
                }
            }
        }
    });
}

// C7: scripted adversarial loop behavior.
#[test]
fn c7_loop_trace_scenarios() {
    criterion(7, None, || {
        // (a) failed verification removes exactly the retrieved candidate and
        // re-invokes the retriever once
        let t = build(&[("alpha", "root"), ("beta", "root"), ("gamma", "root")]);
        let model = zero_model();
        let ranked = rank_candidates(&model, &t, "q", "d");
        let full = chunk("q", &ranked, 5).unwrap().remove(0);
        let round1 = render_retriever_prompt("q", "d", &full, &t).text;
        let mut reduced = full.clone();
        let beta = t.require("beta").unwrap();
        let pos = reduced.members.iter().position(|&m| m == beta).unwrap();
        reduced.members.remove(pos);
        reduced.scores.remove(pos);
        let round2 = render_retriever_prompt("q", "d", &reduced, &t).text;
        let backend = ScriptBackend::new()
            .with_default_response("YES")
            .with_response(&round1, "beta")
            .with_response(&round2, "alpha")
            .with_echo("q -> alpha -> root", &[-0.4])
            .with_echo("q -> beta -> root", &[-1.2])
            .with_echo("q -> gamma -> root", &[-1.5])
            .with_echo("q -> root", &[-2.0]);
        let mut trace: Vec<TraceEvent> = Vec::new();
        let p = expand_query("q", "d", None, &t, &model, &backend, &PipelineConfig::default(), &mut trace)
            .unwrap();
        assert_eq!(p.predicted.as_deref(), Some("alpha"));
        assert_eq!(trace.iter().filter(|e| e.stage == Stage::Retrieve).count(), 2);
        let removes: Vec<_> = trace.iter().filter(|e| e.stage == Stage::Remove).collect();
        assert_eq!(removes.len(), 1);
        assert_eq!(removes[0].payload["candidate"], serde_json::json!("beta"));

        // (b) all-NO filtering never reaches the retriever and exhausts
        let backend = ScriptBackend::new().with_default_response("No");
        let mut trace = Vec::new();
        let p = expand_query("q", "d", None, &t, &model, &backend, &PipelineConfig::default(), &mut trace)
            .unwrap();
        assert_eq!(p.predicted, None);
        assert_eq!(p.status, PredictionStatus::Exhausted);
        assert_eq!(trace.iter().filter(|e| e.stage == Stage::Retrieve).count(), 0);

        // (c) a batch of k candidates survives at most k−1 rounds: every
        // verification fails, so members fall one per round until one is left
        let t = build(&[("a", "root"), ("b", "root"), ("c", "root"), ("d", "root"), ("e", "root")]);
        let ranked = rank_candidates(&model, &t, "q", "d");
        let chunks = chunk("q", &ranked, 5).unwrap();
        assert_eq!(chunks[0].members.len(), 5);
        let mut backend = ScriptBackend::new()
            .with_default_response("YES")
            .with_default_echo_logprob(-0.7);
        let mut shrinking = chunks[0].clone();
        // the script always retrieves the last member; equal logprobs make
        // the alphabetically-first shortest path win, so every round fails
        loop {
            let prompt = render_retriever_prompt("q", "d", &shrinking, &t).text;
            let last = *shrinking.members.last().unwrap();
            backend = backend.with_response(&prompt, t.name(last));
            shrinking.members.pop();
            shrinking.scores.pop();
            if shrinking.members.len() == 1 {
                break;
            }
        }
        let mut trace = Vec::new();
        let p = expand_query("q", "d", None, &t, &model, &backend, &PipelineConfig::default(), &mut trace)
            .unwrap();
        assert_eq!(p.predicted, None);
        assert_eq!(p.status, PredictionStatus::Exhausted);
        let rounds = trace
            .iter()
            .filter(|e| e.stage == Stage::Retrieve && e.batch_index == 0)
            .count();
        assert_eq!(rounds, 4, "a batch of 5 must terminate in exactly k−1 = 4 rounds here");
        for batch in trace.iter().map(|e| e.batch_index).collect::<BTreeSet<_>>() {
            let per_batch = trace
                .iter()
                .filter(|e| e.stage == Stage::Retrieve && e.batch_index == batch)
                .count();
            assert!(per_batch <= 4, "no batch may loop beyond k−1 rounds");
        }
    });
}

// C8: worker count must not leak into results.
#[test]
fn c8_parallelism_equivalence() {
    criterion(8, None, || {
        let (t, queries) = benchmark_split(7).unwrap();
        let samples = sample_training_data(&t, 15, 7).unwrap();
        let mut m = ScorerModel::new(1 << 15, 7);
        m.learning_rate = 0.05;
        m.epochs = 100;
        let model = train(&m, &samples).unwrap().model;
        let gold_pairs: Vec<(String, String)> = queries
            .iter()
            .map(|q| (q.name.clone(), q.gold_parent.clone().unwrap()))
            .collect();
        let inputs: Vec<(String, String, Option<String>)> = queries
            .iter()
            .map(|q| (q.name.clone(), q.definition.clone(), q.gold_parent.clone()))
            .collect();

        let run = |parallelism: usize| {
            let backend = OracleBackend::new(t.clone(), &gold_pairs);
            let config = PipelineConfig { parallelism, ..PipelineConfig::default() };
            expand_all(&inputs, &t, &model, &backend, &config)
        };
        let serial = run(1);
        let parallel = run(4);
        assert!(serial.failures.is_empty() && parallel.failures.is_empty());

        let sorted_json = |mut preds: Vec<Prediction>| {
            preds.sort_by(|a, b| a.query.cmp(&b.query));
            serde_json::to_string(&preds).unwrap()
        };
        assert_eq!(
            sorted_json(serial.predictions),
            sorted_json(parallel.predictions),
            "prediction bytes must not depend on the worker count"
        );

        // trace content (minus wall-clock stamps) must agree per query too
        let shape = |mut events: Vec<TraceEvent>| {
            events.sort_by(|a, b| a.query.cmp(&b.query));
            events
                .into_iter()
                .map(|e| (e.query, e.stage, e.batch_index, e.payload))
                .collect::<Vec<_>>()
        };
        assert_eq!(shape(serial.trace), shape(parallel.trace));
    });
}

// C9: chunking is a partition into k-sized windows, last one ragged.
#[test]
fn c9_chunking_contract() {
    criterion(9, None, || {
        let t = random_tree(201, 0);
        let ids: Vec<_> = t.node_ids().collect();
        for n in 1..=200usize {
            let ranked: Vec<RankedCandidate> =
                ids[..n].iter().map(|&node| RankedCandidate { node, score: 0.0 }).collect();
            for k in 2..=20usize {
                let chunks = chunk("q", &ranked, k).unwrap();
                assert_eq!(chunks.len(), n.div_ceil(k), "chunk count for n={n}, k={k}");
                for (i, c) in chunks.iter().enumerate() {
                    assert_eq!(c.index, i);
                    assert_eq!(c.members.len(), c.scores.len());
                    if i + 1 < chunks.len() {
                        assert_eq!(c.members.len(), k, "only the last chunk may be ragged");
                    } else {
                        assert_eq!(c.members.len(), n - k * (chunks.len() - 1));
                    }
                }
                let concat: Vec<_> = chunks.iter().flat_map(|c| c.members.iter().copied()).collect();
                assert_eq!(concat, ids[..n], "concatenation must reproduce the ranking");
            }
        }
    });
}

// C10: optional live smoke against a real completions endpoint, gated on
// TAXOGRAFT_SMOKE_URL. The key is read from the environment variable named
// by TAXOGRAFT_SMOKE_KEY_ENV (default OPENAI_API_KEY) and never printed.
#[test]
fn c10_live_endpoint_smoke() {
    let Ok(base_url) = std::env::var("TAXOGRAFT_SMOKE_URL") else {
        println!("[acceptance] C10 PASS (live smoke skipped: TAXOGRAFT_SMOKE_URL unset)");
        return;
    };
    criterion(10, None, move || {
        let model_name =
            std::env::var("TAXOGRAFT_SMOKE_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo-instruct".into());
        let key_env =
            std::env::var("TAXOGRAFT_SMOKE_KEY_ENV").unwrap_or_else(|_| "OPENAI_API_KEY".into());
        let backend = HttpBackend::new(EndpointConfig {
            base_url,
            model: model_name,
            api_key_env: Some(key_env),
            timeout: Duration::from_secs(60),
            retries: 2,
            parallelism: 2,
            audit_log: None,
        })
        .unwrap();

        // stop-at-newline truncation on a prompt that invites several lines
        let req = CompletionRequest::generate("List the planets of the solar system, one per line:\n1.");
        let resp = backend.complete(&req).unwrap();
        assert!(!resp.text.contains('\n'), "stop [\"\\n\"] must truncate: {:?}", resp.text);

        // logprob echo scoring comes back finite and non-positive
        let avg = average_logprob(&backend, "The capital of France is", " Paris").unwrap();
        assert!(avg.is_finite() && avg <= 0.0, "echo scoring returned {avg}");

        // one query end-to-end; the trace must reproduce the request count
        let (t, queries) = benchmark_split(7).unwrap();
        let q = &queries[0];
        let mut trace = Vec::new();
        let p = expand_query(
            &q.name,
            &q.definition,
            q.gold_parent.as_deref(),
            &t,
            &zero_model(),
            &backend,
            &PipelineConfig::default(),
            &mut trace,
        )
        .unwrap();

        let mut recounted = 0usize;
        let mut batches = BTreeSet::new();
        let mut rounds_cost = 0usize;
        for e in &trace {
            match e.stage {
                Stage::Filter => {
                    recounted += e.payload["completions"].as_array().unwrap().len();
                    batches.insert(e.batch_index);
                }
                Stage::Retrieve => {
                    recounted += e.payload["completions"].as_array().unwrap().len();
                    // one retrieve round plus one echo scoring per live path,
                    // with headroom for a single parse re-ask
                    rounds_cost += 2 + 5;
                }
                Stage::Verify => {
                    recounted += e.payload["scores"].as_array().unwrap().len();
                }
                _ => {}
            }
        }
        assert_eq!(trace_backend_requests(&trace), recounted);
        assert!(recounted <= batches.len() * 2 + rounds_cost, "request count exceeded the loop bound");
        assert!(p.llm_calls >= batches.len(), "at least one filter call per batch");
    });
}
