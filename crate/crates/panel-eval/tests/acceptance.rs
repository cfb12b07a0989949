//! Acceptance checks for the crate's core guarantees: statistical metrics
//! against independently written definitional oracles, the debate protocol
//! under randomized scripted agent policies, reference arithmetic, byte-
//! identical reproducible runs, token pricing, rendered-prompt fidelity, and
//! balanced dataset sampling. Every test prints one `[PASS]` line describing
//! the property it verified; assertion messages carry a `[FAIL]` prefix.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panel_eval::dataset::{Dataset, DatasetItem};
use panel_eval::debate::{run_group_debate, EvaluationItem, ScoreScale};
use panel_eval::gateway::{
    BackendError, BackendReply, ChatBackend, Gateway, MatchSpec, ScriptEntry, ScriptedBackend,
};
use panel_eval::metrics::{
    kendall_tau, krippendorff_alpha, pearson_r, rouge_l_f1, spearman_rho, AlphaLevel,
};
use panel_eval::personas::Persona;
use panel_eval::perspectives::DimensionEvidence;
use panel_eval::pipeline::{estimated_cost, Overrides, Pipeline};
use panel_eval::prompts::{self, AgentSystemSlots};

fn pass(message: &str) {
    println!("[PASS] {message}");
}

// ---------------------------------------------------------------------------
// Definitional oracles, written from the textbook formulas with different
// algorithmic structure than the library implementations.
// ---------------------------------------------------------------------------

/// Pearson's r via the raw-moment computational formula
/// (Σxy − n·x̄·ȳ) / √((Σx² − n·x̄²)(Σy² − n·ȳ²)).
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sum_x: f64 = x.iter().sum();
    let sum_y: f64 = y.iter().sum();
    let sum_xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sum_xx: f64 = x.iter().map(|a| a * a).sum();
    let sum_yy: f64 = y.iter().map(|b| b * b).sum();
    let mean_x = sum_x / n;
    let mean_y = sum_y / n;
    let cov = sum_xy - n * mean_x * mean_y;
    let var_x = sum_xx - n * mean_x * mean_x;
    let var_y = sum_yy - n * mean_y * mean_y;
    cov / (var_x * var_y).sqrt()
}

/// Mid-ranks by per-element counting: rank = #smaller + (#equal + 1) / 2.
fn midrank_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let smaller = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect()
}

fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&midrank_oracle(x), &midrank_oracle(y))
}

/// Pairs tied on a single vector: Σ t·(t−1)/2 over tie groups.
fn tie_pairs(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * (t - 1.0) / 2.0;
        i = j + 1;
    }
    total
}

/// Kendall's tau-b via the tie-group formula
/// (C − D) / √((n₀ − n₁)(n₀ − n₂)).
fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut concordant = 0.0;
    let mut discordant = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            if (dx > 0.0) == (dy > 0.0) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1)) as f64 / 2.0;
    let n1 = tie_pairs(x);
    let n2 = tie_pairs(y);
    (concordant - discordant) / ((n0 - n1) * (n0 - n2)).sqrt()
}

/// Interval-level agreement coefficient via the coincidence-matrix
/// formulation: build the full ordered-pair coincidence matrix, take value
/// marginals from its row sums, then α = 1 − D_o / D_e.
fn alpha_interval_oracle(rows: &[Vec<Option<f64>>]) -> f64 {
    let n_items = rows[0].len();
    let mut units: Vec<Vec<f64>> = Vec::new();
    for item in 0..n_items {
        let unit: Vec<f64> = rows.iter().filter_map(|row| row[item]).collect();
        if unit.len() >= 2 {
            units.push(unit);
        }
    }
    let mut values: Vec<f64> = units.iter().flatten().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();
    let k = values.len();
    let index_of = |v: f64| values.iter().position(|&d| d == v).expect("value present");

    let mut coincidence = vec![vec![0.0f64; k]; k];
    for unit in &units {
        let m = unit.len() as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[index_of(a)][index_of(b)] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for t in 0..k {
            let delta_sq = (values[c] - values[t]) * (values[c] - values[t]);
            observed += coincidence[c][t] * delta_sq;
            expected += marginals[c] * marginals[t] * delta_sq;
        }
    }
    let d_o = observed / n;
    let d_e = expected / (n * (n - 1.0));
    if d_e == 0.0 {
        1.0
    } else {
        1.0 - d_o / d_e
    }
}

/// Lowercased alphanumeric-run tokens, matching the documented overlap
/// tokenization.
fn overlap_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Longest common subsequence length by top-down recursion with memoization.
fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &mut BTreeMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&hit) = memo.get(&(i, j)) {
            return hit;
        }
        let result = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), result);
        result
    }
    go(a, b, 0, 0, &mut BTreeMap::new())
}

fn rouge_oracle(candidate: &str, reference: &str) -> f64 {
    let cand = overlap_tokens(candidate);
    let refr = overlap_tokens(reference);
    let lcs = lcs_oracle(&cand, &refr) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / refr.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

// ---------------------------------------------------------------------------
// 1. Correlation coefficients against the oracles.
// ---------------------------------------------------------------------------

#[test]
fn correlation_coefficients_match_definitional_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let started = Instant::now();
    let mut checked = 0usize;
    while checked < 50 {
        let n = rng.gen_range(3..=12);
        // Small integer values so ties are frequent.
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=5) as f64).collect();
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        if constant(&x) || constant(&y) {
            continue; // correlation undefined; draw a fresh vector
        }
        checked += 1;

        let r = pearson_r(&x, &y).expect("[FAIL] pearson errored on a valid vector pair");
        let rho = spearman_rho(&x, &y).expect("[FAIL] spearman errored on a valid vector pair");
        let tau = kendall_tau(&x, &y).expect("[FAIL] kendall errored on a valid vector pair");

        let cases = [
            ("pearson", r, pearson_oracle(&x, &y)),
            ("spearman", rho, spearman_oracle(&x, &y)),
            ("kendall", tau, kendall_oracle(&x, &y)),
        ];
        for (name, got, want) in cases {
            assert!(
                (got - want).abs() <= 1e-12,
                "[FAIL] {name} diverges from the definitional oracle on vector {checked}: \
                 got {got}, oracle {want}, x={x:?}, y={y:?}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "[FAIL] correlation battery took {elapsed:?}, budget is 1s"
    );
    pass(&format!(
        "pearson, spearman, and kendall match their definitional oracles to 1e-12 \
         on 50 random tied vectors in {elapsed:?}"
    ));
}

// ---------------------------------------------------------------------------
// 2. Agreement coefficient against the coincidence-matrix oracle.
// ---------------------------------------------------------------------------

#[test]
fn agreement_coefficient_matches_coincidence_matrix_oracle() {
    let r = |values: &[f64]| values.iter().map(|&v| Some(v)).collect::<Vec<_>>();

    // Perfect agreement across distinct values: zero observed disagreement.
    let perfect_two = vec![r(&[1.0, 2.0, 3.0, 4.0]), r(&[1.0, 2.0, 3.0, 4.0])];
    let alpha = krippendorff_alpha(&perfect_two, AlphaLevel::Interval)
        .expect("[FAIL] alpha errored on a perfect-agreement matrix");
    assert_eq!(alpha, 1.0, "[FAIL] perfect agreement must score exactly 1.0");

    // Perfect agreement with a missing cell.
    let perfect_missing = vec![
        vec![Some(2.0), Some(3.0), None],
        r(&[2.0, 3.0, 5.0]),
        r(&[2.0, 3.0, 5.0]),
    ];
    let alpha = krippendorff_alpha(&perfect_missing, AlphaLevel::Interval)
        .expect("[FAIL] alpha errored on a perfect-agreement matrix with a gap");
    assert_eq!(alpha, 1.0, "[FAIL] perfect agreement with missing cells must score exactly 1.0");

    // A single repeated value: expected disagreement is zero by definition.
    let degenerate = vec![r(&[4.0, 4.0, 4.0]), r(&[4.0, 4.0, 4.0])];
    let alpha = krippendorff_alpha(&degenerate, AlphaLevel::Interval)
        .expect("[FAIL] alpha errored on a single-value matrix");
    assert_eq!(alpha, 1.0, "[FAIL] a single repeated value must score exactly 1.0");

    // Mixed fixtures with disagreement and missing ratings.
    let mixed: [Vec<Vec<Option<f64>>>; 3] = [
        vec![
            r(&[1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 4.0, 1.0, 2.0]),
            r(&[1.0, 2.0, 3.0, 3.0, 2.0, 2.0, 4.0, 1.0, 1.0]),
        ],
        vec![
            vec![Some(2.0), Some(3.0), Some(1.0), None, Some(4.0), Some(2.0)],
            vec![Some(2.0), Some(4.0), Some(1.0), Some(3.0), Some(4.0), None],
            vec![Some(3.0), Some(3.0), Some(2.0), Some(3.0), Some(5.0), Some(2.0)],
        ],
        vec![
            vec![Some(1.0), Some(2.0), None, Some(3.0), Some(2.0)],
            vec![Some(1.0), Some(3.0), None, Some(3.0), Some(1.0)],
            vec![Some(2.0), Some(2.0), Some(1.0), None, Some(2.0)],
            vec![None, Some(2.0), None, Some(3.0), Some(2.0)],
        ],
    ];
    for (index, fixture) in mixed.iter().enumerate() {
        let got = krippendorff_alpha(fixture, AlphaLevel::Interval)
            .expect("[FAIL] alpha errored on a mixed fixture");
        let want = alpha_interval_oracle(fixture);
        assert!(
            want.is_finite() && want < 1.0,
            "[FAIL] mixed fixture {index} should have genuine disagreement (oracle {want})"
        );
        assert!(
            (got - want).abs() <= 1e-12,
            "[FAIL] alpha diverges from the coincidence-matrix oracle on fixture {index}: \
             got {got}, oracle {want}"
        );
    }
    pass(
        "agreement coefficient is exactly 1.0 on perfect fixtures and matches the \
         coincidence-matrix oracle to 1e-12 on 3 mixed fixtures",
    );
}

// ---------------------------------------------------------------------------
// 3. Lexical overlap against the recursive LCS oracle.
// ---------------------------------------------------------------------------

#[test]
fn lexical_overlap_matches_recursive_lcs_oracle() {
    let sentence = "Mira the mouse shares her lantern with the shivering owl.";
    let identity = rouge_l_f1(sentence, sentence).expect("[FAIL] overlap errored on identity");
    assert_eq!(identity, 1.0, "[FAIL] identical texts must score exactly 1.0");

    let disjoint = rouge_l_f1("moonlight sonata tonight", "gravel driveway repairs")
        .expect("[FAIL] overlap errored on disjoint texts");
    assert_eq!(disjoint, 0.0, "[FAIL] token-disjoint texts must score exactly 0.0");

    let fixtures = [
        ("The quick brown fox jumps over the lazy dog", "the quick brown fox naps beside the lazy dog"),
        ("A tiny lantern glows in the window", "In the window a tiny lantern glows"),
        ("one two three four five", "one three five"),
        ("Stories teach children kindness.", "Kindness is taught by stories, children say."),
        ("counting 1 2 3 and again 1 2 3", "1 2 3"),
        ("Bears eat honey; bees make honey.", "Bees guard honey that bears adore."),
        ("alpha beta gamma delta", "delta gamma beta alpha"),
        ("Same words same words same words", "same WORDS Same Words"),
        ("punctuation, should; not: matter!", "punctuation should not matter"),
        ("a b c d e f g", "b d f h j"),
    ];
    for (index, (candidate, reference)) in fixtures.iter().enumerate() {
        let got = rouge_l_f1(candidate, reference)
            .expect("[FAIL] overlap errored on a fixture pair");
        let want = rouge_oracle(candidate, reference);
        assert!(
            got == want,
            "[FAIL] overlap diverges from the LCS oracle on fixture {index}: \
             got {got}, oracle {want}, candidate {candidate:?}, reference {reference:?}"
        );
    }
    pass(
        "lexical overlap is 1.0 on identity, 0.0 on disjoint texts, and matches the \
         recursive LCS oracle exactly on 10 fixtures",
    );
}

// ---------------------------------------------------------------------------
// 4. Debate protocol under randomized scripted policies.
// ---------------------------------------------------------------------------

fn persona(name: &str, group: &str) -> Persona {
    Persona {
        persona_name: name.into(),
        group_name: group.into(),
        demographic_info: format!("{name} background"),
        evaluative_dimension: format!("{name} perspective"),
        specialty: format!("{name} specialty"),
        psychological_traits: format!("{name} traits"),
        social_relationships: format!("{name} relationships"),
        provenance: DimensionEvidence {
            dimension: format!("{name} perspective"),
            evidence: "quoted evidence".into(),
            doc_id: "doc".into(),
        },
    }
}

fn story_item(id: &str) -> EvaluationItem {
    EvaluationItem {
        item_id: id.into(),
        content: "Mira the mouse shares her lantern with the shivering owl.".into(),
        context: "A calming bedtime story brief about kindness.".into(),
        task_description: "Assess the quality of machine-generated bedtime stories for children aged three to eight.".into(),
        response_format: "Feedback: <your feedback>\nScore: <score>".into(),
        content_kind: "story".into(),
        context_kind: "story brief".into(),
        scale: ScoreScale::likert5(),
    }
}

/// One agent's scripted debate behaviour.
#[derive(Debug, Clone)]
struct AgentPolicy {
    score: f64,
    /// Debate turn (1-based) on which the agent bows out with the marker.
    finish_turn: usize,
    /// Whether the bowing-out turn restates the score.
    score_on_finish: bool,
    /// Whether the first independent evaluation omits the score, forcing
    /// one repair request.
    withhold_first_score: bool,
    /// Whether mid-debate comments restate the score.
    score_mid_debate: bool,
}

#[derive(Default)]
struct PolicyLog {
    debate_turns: BTreeMap<String, usize>,
    finished: BTreeSet<String>,
    first_pass_seen: BTreeSet<String>,
    moderator_unfinished: Vec<BTreeSet<String>>,
    speaker_calls: usize,
    rotation: usize,
    violations: Vec<String>,
}

/// Chat backend that plays every role in one group debate from a fixed
/// per-agent policy, while recording protocol observations for assertions.
struct PolicyBackend {
    policies: BTreeMap<String, AgentPolicy>,
    moderator_names_speaker: bool,
    log: Mutex<PolicyLog>,
}

impl PolicyBackend {
    fn agent_in(&self, system_text: &str) -> Option<String> {
        self.policies
            .keys()
            .find(|name| system_text.contains(&format!("YOU ARE {name}.")))
            .cloned()
    }
}

impl ChatBackend for PolicyBackend {
    fn send(&self, system_text: &str, user_text: &str) -> Result<BackendReply, BackendError> {
        let reply = |text: String| {
            Ok(BackendReply { text, prompt_tokens: None, reply_tokens: None })
        };
        let mut log = self.log.lock().expect("log lock");

        if user_text.contains("impartial evaluation aggregator") {
            return reply("{\"Feedback\": \"The panel weighed every perspective.\"}".into());
        }

        if user_text.contains("moderator of a free debate") {
            let listed = user_text
                .lines()
                .find_map(|line| line.strip_prefix("Agents who have not finished: "))
                .ok_or_else(|| {
                    BackendError::Fatal("moderator prompt lists no unfinished agents".into())
                })?;
            let unfinished: BTreeSet<String> =
                listed.split(", ").map(str::to_string).collect();
            if let Some(previous) = log.moderator_unfinished.last().cloned() {
                if !unfinished.is_subset(&previous) {
                    log.violations.push(format!(
                        "unfinished set grew from {previous:?} to {unfinished:?}"
                    ));
                }
            }
            log.moderator_unfinished.push(unfinished.clone());
            if self.moderator_names_speaker {
                let pick = log.rotation % unfinished.len();
                log.rotation += 1;
                let name = unfinished.iter().nth(pick).expect("non-empty set").clone();
                return reply(name);
            }
            return reply("Let every voice weigh in before we close.".into());
        }

        let Some(name) = self.agent_in(system_text) else {
            return Err(BackendError::Fatal(format!(
                "no scripted role matches this prompt: {user_text:.60}"
            )));
        };
        let policy = self.policies[&name].clone();

        if user_text.contains("did not include a readable score") {
            return reply(format!("Feedback: on reflection, {name} commits. Score: {}", policy.score));
        }
        if user_text.contains("now in Phase 1") {
            if policy.withhold_first_score && log.first_pass_seen.insert(name.clone()) {
                return reply(format!("Feedback: {name} must reflect before committing."));
            }
            return reply(format!("Feedback: first impressions from {name}. Score: {}", policy.score));
        }
        if user_text.contains("entering Phase 2") {
            log.speaker_calls += 1;
            if log.finished.contains(&name) {
                log.violations.push(format!("{name} was asked to speak after finishing"));
            }
            let turn = log.debate_turns.entry(name.clone()).or_insert(0);
            *turn += 1;
            if *turn >= policy.finish_turn {
                log.finished.insert(name.clone());
                if policy.score_on_finish {
                    return reply(format!(
                        "Feedback: closing remarks from {name}. Score: {}\nNO MORE COMMENTS",
                        policy.score
                    ));
                }
                return reply("NO MORE COMMENTS. My earlier evaluation stands.".into());
            }
            if policy.score_mid_debate {
                return reply(format!(
                    "Feedback: {name} hears the others but holds firm. Score: {}",
                    policy.score
                ));
            }
            return reply(format!("Interesting perspectives; {name} keeps listening."));
        }
        Err(BackendError::Fatal("prompt matched no debate phase".into()))
    }

    fn fingerprint(&self) -> String {
        "policy-backend".into()
    }
}

#[test]
fn randomized_debates_terminate_and_average_final_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let started = Instant::now();

    for case in 0..100 {
        let n_agents = rng.gen_range(3..=5);
        let names: Vec<String> = (1..=n_agents).map(|i| format!("Rater-{i}")).collect();
        let mut policies = BTreeMap::new();
        for name in &names {
            policies.insert(
                name.clone(),
                AgentPolicy {
                    score: rng.gen_range(1..=5) as f64,
                    finish_turn: rng.gen_range(1..=3),
                    score_on_finish: rng.gen_bool(0.5),
                    withhold_first_score: rng.gen_bool(0.25),
                    score_mid_debate: rng.gen_bool(0.5),
                },
            );
        }
        let max_rounds = rng.gen_range(1..=(2 * n_agents + 3));
        let expected_mean = policies.values().map(|p| p.score).sum::<f64>() / n_agents as f64;

        let backend = Arc::new(PolicyBackend {
            policies: policies.clone(),
            moderator_names_speaker: rng.gen_bool(0.5),
            log: Mutex::new(PolicyLog::default()),
        });
        let gateway = Gateway::with_backend(Arc::clone(&backend) as Arc<dyn ChatBackend>);
        let agents: Vec<Persona> = names.iter().map(|n| persona(n, "Panel")).collect();

        let debate = run_group_debate(
            &gateway,
            &format!("case-{case}"),
            &story_item(&format!("item-{case}")),
            "Panel",
            &agents,
            Some(max_rounds),
        )
        .unwrap_or_else(|e| panic!("[FAIL] debate {case} failed to complete: {e}"));

        // Terminates within the round budget.
        assert!(
            debate.state.history.len() <= n_agents + max_rounds,
            "[FAIL] debate {case} exceeded its turn budget: {} turns for {} agents + {} rounds",
            debate.state.history.len(),
            n_agents,
            max_rounds
        );
        let log = backend.log.lock().expect("log lock");
        assert!(
            log.speaker_calls <= max_rounds,
            "[FAIL] debate {case} used {} speaker turns with a budget of {max_rounds}",
            log.speaker_calls
        );

        // Finished agents only ever accumulate.
        assert!(
            log.violations.is_empty(),
            "[FAIL] debate {case} violated the protocol: {:?}",
            log.violations
        );
        let all_names: BTreeSet<String> = names.iter().cloned().collect();
        assert_eq!(
            debate.state.finished_agents, all_names,
            "[FAIL] debate {case} ended with unfinished agents"
        );

        // Exactly one final evaluation per agent.
        let feedback_names: BTreeSet<String> =
            debate.state.final_feedback.keys().cloned().collect();
        assert_eq!(
            feedback_names, all_names,
            "[FAIL] debate {case} lacks a final evaluation for some agent"
        );

        // Every agent's recorded score equals its policy score, and the
        // group score is their arithmetic mean.
        assert_eq!(
            debate.verdict.per_agent_scores.len(),
            n_agents,
            "[FAIL] debate {case} dropped an agent's score"
        );
        for (name, policy) in &policies {
            assert_eq!(
                debate.verdict.per_agent_scores.get(name),
                Some(&policy.score),
                "[FAIL] debate {case}: {name} should have scored {}",
                policy.score
            );
        }
        assert!(
            (debate.verdict.group_score - expected_mean).abs() <= 1e-9,
            "[FAIL] debate {case}: group score {} is not the mean of final scores {expected_mean}",
            debate.verdict.group_score
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "[FAIL] 100 debates took {elapsed:?}, budget is 5s"
    );
    pass(&format!(
        "100 randomized debates (3-5 agents) terminate within budget, keep the finished \
         set monotone, finalize every agent once, and average final scores exactly, in {elapsed:?}"
    ));
}

// ---------------------------------------------------------------------------
// 5. Reference arithmetic: the worked group-mean and normalization values.
// ---------------------------------------------------------------------------

#[test]
fn group_mean_and_likert_normalization_match_reference_values() {
    let entry = |needles: &[&str], reply: &str| ScriptEntry {
        key: None,
        match_text: Some(match needles.len() {
            1 => MatchSpec::One(needles[0].to_string()),
            _ => MatchSpec::All(needles.iter().map(|s| s.to_string()).collect()),
        }),
        reply: reply.into(),
    };
    let entries = vec![
        entry(&["YOU ARE Ava.", "now in Phase 1"], "Feedback: luminous. Score: 5"),
        entry(&["YOU ARE Ben.", "now in Phase 1"], "Feedback: warm. Score: 4"),
        entry(&["YOU ARE Cleo.", "now in Phase 1"], "Feedback: gentle. Score: 4"),
        entry(&["moderator of a free debate"], "Whoever wishes may continue."),
        entry(&["entering Phase 2"], "NO MORE COMMENTS. My evaluation stands."),
        entry(
            &["impartial evaluation aggregator"],
            "{\"Feedback\": \"The panel converged on a warm, gentle story.\"}",
        ),
    ];
    let gateway = Gateway::with_backend(Arc::new(ScriptedBackend::from_entries(entries)));
    let agents = vec![persona("Ava", "Panel"), persona("Ben", "Panel"), persona("Cleo", "Panel")];
    let debate = run_group_debate(&gateway, "worked-example", &story_item("item-w"), "Panel", &agents, None)
        .expect("[FAIL] the worked-example debate failed");

    let scores: Vec<f64> = debate.verdict.per_agent_scores.values().copied().collect();
    assert_eq!(scores, vec![5.0, 4.0, 4.0], "[FAIL] final scores should be 5, 4, 4 (agent order)");
    assert!(
        (debate.verdict.group_score - 4.33).abs() <= 0.005,
        "[FAIL] final scores 5, 4, 4 should average to 4.33 +/- 0.005, got {}",
        debate.verdict.group_score
    );

    let scale = ScoreScale::likert5();
    assert_eq!(scale.normalized(3.0), 0.50, "[FAIL] likert-5 score 3 must normalize to exactly 0.50");
    assert_eq!(scale.normalized(4.0), 0.75, "[FAIL] likert-5 score 4 must normalize to exactly 0.75");
    pass(
        "final scores 5, 4, 4 average to 4.33 and likert-5 scores 3 and 4 normalize \
         to exactly 0.50 and 0.75",
    );
}

// ---------------------------------------------------------------------------
// 6. Byte-identical runs across invocations and concurrency limits.
// ---------------------------------------------------------------------------

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for dir_entry in std::fs::read_dir(dir).expect("readable run directory") {
            let path = dir_entry.expect("directory entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let relative = path
                    .strip_prefix(root)
                    .expect("path under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(relative, std::fs::read(&path).expect("readable artifact"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn assert_identical_trees(label: &str, a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) {
    let a_paths: BTreeSet<&String> = a.keys().collect();
    let b_paths: BTreeSet<&String> = b.keys().collect();
    assert_eq!(a_paths, b_paths, "[FAIL] {label}: run directories contain different files");
    for (path, bytes) in a {
        assert!(
            bytes == &b[path],
            "[FAIL] {label}: {path} differs between the two run directories"
        );
    }
}

#[test]
fn scripted_runs_are_byte_identical_across_invocations_and_concurrency() {
    let config = fixtures_dir().join("run.json");
    let run_with = |workers: usize| -> BTreeMap<String, Vec<u8>> {
        let out = tempfile::tempdir().expect("temp out dir");
        let pipeline = Pipeline::with_overrides(
            &config,
            out.path(),
            Overrides { concurrency_limit: Some(workers), ..Overrides::default() },
        )
        .expect("[FAIL] pipeline construction failed on the shipped fixtures");
        pipeline.run().expect("[FAIL] pipeline run failed on the shipped fixtures");
        tree_bytes(out.path())
    };

    let first = run_with(1);
    assert!(
        first.contains_key("scores.csv") && first.contains_key("report.json"),
        "[FAIL] the run directory is missing its headline artifacts"
    );
    let second = run_with(1);
    assert_identical_trees("repeat invocation", &first, &second);
    let parallel = run_with(4);
    assert_identical_trees("concurrency 1 vs 4", &first, &parallel);
    pass(&format!(
        "full scripted runs are byte-identical across invocations and across \
         concurrency limits 1 and 4 ({} artifacts compared)",
        first.len()
    ));
}

// ---------------------------------------------------------------------------
// 7. Token pricing.
// ---------------------------------------------------------------------------

#[test]
fn token_pricing_matches_reference_value() {
    let cost = estimated_cost(141_329, 3.0);
    assert!(
        (cost - 0.4240).abs() <= 1e-4,
        "[FAIL] 141,329 tokens at 3.0 per million should cost 0.4240 +/- 0.0001, got {cost}"
    );
    pass("141,329 tokens at 3.0 per million price out at 0.4240 +/- 0.0001");
}

// ---------------------------------------------------------------------------
// 8. Rendered prompts match the committed goldens and anchor phrases.
// ---------------------------------------------------------------------------

fn golden_renders() -> Vec<(&'static str, String)> {
    let task = "Assess the quality of machine-generated bedtime stories for children aged three to eight.";
    let content = "Mira the mouse shares her lantern with the shivering owl, and together they light the winter wood.";
    let context = "Brief: a calming story about kindness for ages three to eight.";
    let response_format = "Feedback: <your feedback>\nScore: <score>";
    let final_evaluations = "[Tessa Marlow]: Feedback: gentle and warm. Score: 5\n\
                             [Milo Brant]: Feedback: cosy but slightly flat. Score: 4";
    vec![
        ("extraction-system", prompts::extraction_system(task)),
        (
            "record-merge",
            prompts::merge_user(
                task,
                "0. Teachers — patient classroom readers\n\
                    [0, 0] Stories must soothe rather than excite before sleep. \
                 (\"calm pacing helps children settle\", doc reading-circles)\n\
                 1. Parents — nightly readers at home\n\
                    [1, 0] Stories must avoid frightening imagery. \
                 (\"scary images linger\", doc bedtime-habits)",
            ),
        ),
        (
            "persona-construction",
            prompts::persona_user(
                task,
                "Stakeholder group: Teachers\n\
                 Characteristics: patient classroom readers\n\
                 Perspectives:\n\
                 - Stories must soothe rather than excite before sleep. \
                 (evidence: \"calm pacing helps children settle\")",
            ),
        ),
        (
            "agent-system",
            prompts::agent_system(&AgentSystemSlots {
                agent_name: "Tessa Marlow",
                demographic_info: "A 38-year-old kindergarten teacher who reads aloud daily",
                evaluative_dimension: "Stories must soothe rather than excite before sleep.",
                specialty: "Early-childhood literacy and read-aloud pacing.",
                psychological_traits: "Warm, observant, and steady under classroom chaos.",
                social_relationships: "Coordinates with parents and the school librarian.",
                content_kind: "story",
                task_description: task,
                content,
                context,
                response_format,
            }),
        ),
        ("phase1-evaluation", prompts::phase1_user(content, context, response_format)),
        (
            "phase2-debate-turn",
            prompts::phase2_user(
                final_evaluations,
                "[Tessa Marlow]: The shared lantern is the emotional core.",
                response_format,
            ),
        ),
        ("synthesis-aggregator", prompts::aggregator_user(final_evaluations, 4.5)),
        (
            "next-speaker",
            prompts::coordinator_user(
                "[Tessa Marlow]: The shared lantern is the emotional core.",
                "Milo Brant, Priya Nair",
            ),
        ),
        (
            "rubric-judge",
            prompts::rubric_judge_user(
                "story",
                task,
                "creativity, age-appropriate language, emotional safety, engagement",
                context,
                content,
            ),
        ),
        ("dual-role-judge", prompts::dual_role_judge_user("story", "story brief", task, context, content)),
    ]
}

#[test]
fn rendered_prompts_match_goldens_and_contain_anchor_phrases() {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("BLESS_GOLDEN").is_some();
    let renders = golden_renders();

    for (name, rendered) in &renders {
        let path = golden_dir.join(format!("{name}.txt"));
        if bless {
            std::fs::create_dir_all(&golden_dir).expect("golden dir");
            std::fs::write(&path, rendered).expect("write golden file");
            continue;
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|_| {
            panic!(
                "[FAIL] golden file {} is missing; run with BLESS_GOLDEN=1 to regenerate",
                path.display()
            )
        });
        assert_eq!(
            rendered, &golden,
            "[FAIL] the rendered {name} prompt deviates from its golden file"
        );
    }

    let by_name: BTreeMap<&str, &String> =
        renders.iter().map(|(name, text)| (*name, text)).collect();
    let anchors = [
        ("extraction-system", "identify or construct a diverse"),
        ("agent-system", "NO MORE COMMENTS"),
        ("phase2-debate-turn", "NO MORE COMMENTS"),
        ("synthesis-aggregator", "impartial evaluation aggregator"),
        ("dual-role-judge", "five-point Likert scale"),
    ];
    for (name, anchor) in anchors {
        assert!(
            by_name[name].contains(anchor),
            "[FAIL] the rendered {name} prompt lost its anchor phrase {anchor:?}"
        );
    }
    pass(&format!(
        "{} rendered prompts match their golden files and carry every anchor phrase verbatim",
        renders.len()
    ));
}

// ---------------------------------------------------------------------------
// 9. Balanced sampling.
// ---------------------------------------------------------------------------

#[test]
fn balanced_sampling_is_exact_and_seed_reproducible() {
    let items: Vec<DatasetItem> = (0..120)
        .map(|i| DatasetItem {
            item_id: format!("item-{i:03}"),
            content: format!("story number {i}"),
            context: String::new(),
            metadata: BTreeMap::from([(
                "model".to_string(),
                serde_json::json!(format!("writer-{}", i % 6)),
            )]),
        })
        .collect();
    let dataset = Dataset {
        dataset_id: "sampling-check".into(),
        native_scale: ScoreScale::likert5(),
        task_description: "judge the stories".into(),
        response_format: "Feedback: <f>\nScore: <s>".into(),
        content_kind: "story".into(),
        context_kind: "context".into(),
        criteria: vec![],
        items,
        human_ratings: BTreeMap::new(),
        rating_codings: BTreeMap::new(),
    };

    let sample = dataset
        .sample_balanced("model", 17, 41)
        .expect("[FAIL] balanced sampling failed on a 6x20 dataset");
    assert_eq!(sample.len(), 102, "[FAIL] 6 groups x 17 items must yield 102 ids");

    let unique: BTreeSet<&String> = sample.iter().collect();
    assert_eq!(unique.len(), 102, "[FAIL] the sample repeats an item id");

    let mut per_group: BTreeMap<String, usize> = BTreeMap::new();
    for id in &sample {
        let item = dataset.item(id).expect("sampled id exists");
        let group = item.metadata["model"].as_str().expect("group label").to_string();
        *per_group.entry(group).or_default() += 1;
    }
    assert_eq!(per_group.len(), 6, "[FAIL] the sample misses a group");
    for (group, count) in &per_group {
        assert_eq!(*count, 17, "[FAIL] group {group} has {count} items instead of 17");
    }

    let again = dataset
        .sample_balanced("model", 17, 41)
        .expect("[FAIL] balanced sampling failed on the second draw");
    assert_eq!(sample, again, "[FAIL] the same seed must reproduce the same sample");
    pass("balanced sampling draws exactly 17 items from each of 6 groups (102 total), reproducibly per seed");
}
