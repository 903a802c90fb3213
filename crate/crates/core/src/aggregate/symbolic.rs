use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ActionEval, AggregateError, Aggregator, AggregatorKind, Estimate, Improvement, Improver};
use crate::language::{OneStepOutcome, RenderedTrajectory, StateContext, ValueContent};
use crate::mdp::{ActionId, StateKind};
use crate::textify::{is_none_text, ConceptEvaluation, NONE_TEXT, TRUNCATION_SENTENCE};

const GOAL_SUFFIX: &str = ", this is the goal";
const HOLE_SUFFIX: &str = " (hole)";
const DISTANCE_SEP: &str = ", distance is ";
const ARROW: &str = " -> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptRank {
    ImmediateRisk = 0,
    FutureRisk = 1,
    Unknown = 2,
    SafeProgress = 3,
    ReachesGoal = 4,
}

impl ConceptRank {
    pub fn ordinal(self) -> i64 {
        self as i64
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub rank: ConceptRank,
    pub path_length: Option<usize>,
    /// The safest path could not be parsed.
    #[serde(default, skip_serializing_if = "is_false")]
    pub malformed: bool,
    /// Distinct holes one step away.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub immediate_holes: usize,
    /// Distance to the closest hole listed under future risk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest_hole: Option<usize>,
}

impl ConceptScore {
    pub fn new(rank: ConceptRank, path_length: Option<usize>) -> Self {
        Self { rank, path_length, malformed: false, immediate_holes: 0, nearest_hole: None }
    }

    /// Orders actions of equal rank: fewer immediate holes, then shorter
    /// paths, then holes further away.
    fn tie_key(&self) -> (std::cmp::Reverse<usize>, std::cmp::Reverse<usize>, usize) {
        (
            std::cmp::Reverse(self.immediate_holes),
            std::cmp::Reverse(self.path_length.unwrap_or(usize::MAX)),
            self.nearest_hole.unwrap_or(usize::MAX),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathShape {
    pub steps: usize,
    pub goal: bool,
}

/// Parses `(s0) -> a0 -> (s1) -> ... -> (sn)[, this is the goal]`.
/// A last segment reading `goal` also counts as reaching the goal.
pub fn parse_path(s: &str) -> Option<PathShape> {
    let text = s.trim().trim_end_matches('.');
    let (body, mut goal) = match text.strip_suffix(GOAL_SUFFIX) {
        Some(b) => (b, true),
        None => (text, false),
    };
    let segments: Vec<&str> = body.split(ARROW).map(str::trim).collect();
    if segments.len() < 3 || segments.len() % 2 == 0 || segments.iter().any(|x| x.is_empty()) {
        return None;
    }
    if segments.last().is_some_and(|l| l.eq_ignore_ascii_case("goal")) {
        goal = true;
    }
    Some(PathShape { steps: (segments.len() - 1) / 2, goal })
}

pub fn score_concepts(c: &ConceptEvaluation) -> ConceptScore {
    let path = if is_none_text(&c.safest_path) { None } else { Some(parse_path(&c.safest_path)) };
    let path_length = path.flatten().map(|p| p.steps);
    let immediate: BTreeSet<String> =
        split_entries(&c.immediate_risk).iter().map(|e| RiskEntry::parse(e).map_or_else(|| e.clone(), |r| r.hole)).collect();
    let nearest_hole = split_entries(&c.future_risk).iter().filter_map(|e| RiskEntry::parse(e)).map(|r| r.distance).min();
    let score = |rank, path_length| ConceptScore {
        immediate_holes: immediate.len(),
        nearest_hole,
        ..ConceptScore::new(rank, path_length)
    };
    if !immediate.is_empty() {
        return score(ConceptRank::ImmediateRisk, path_length);
    }
    match path {
        Some(Some(p)) => score(if p.goal { ConceptRank::ReachesGoal } else { ConceptRank::SafeProgress }, path_length),
        Some(None) => {
            log::warn!("unparseable safest path: {}", c.safest_path);
            ConceptScore { malformed: true, ..score(ConceptRank::Unknown, None) }
        }
        None if !is_none_text(&c.future_risk) => score(ConceptRank::FutureRisk, None),
        None => score(ConceptRank::Unknown, None),
    }
}

/// A path into a hole: `... -> (h) (hole), distance is n`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RiskEntry {
    pub path: String,
    pub hole: String,
    pub distance: usize,
}

impl RiskEntry {
    pub fn parse(s: &str) -> Option<Self> {
        let (path, d) = s.trim().rsplit_once(DISTANCE_SEP)?;
        let distance = d.trim().trim_end_matches('.').parse().ok()?;
        let hole = path.strip_suffix(HOLE_SUFFIX)?.rsplit(ARROW).next()?.trim().to_string();
        Some(Self { path: path.to_string(), hole, distance })
    }

    pub fn render(&self) -> String {
        format!("{}{DISTANCE_SEP}{}", self.path, self.distance)
    }

    fn sort_key(&self) -> (usize, &str, &str) {
        (self.distance, &self.hole, &self.path)
    }
}

fn split_entries(s: &str) -> Vec<String> {
    if is_none_text(s) {
        return Vec::new();
    }
    s.split("; ").map(str::trim).filter(|e| !e.is_empty()).map(String::from).collect()
}

fn join_entries<I: IntoIterator<Item = String>>(entries: I) -> String {
    let v: Vec<String> = entries.into_iter().collect();
    if v.is_empty() {
        NONE_TEXT.to_string()
    } else {
        v.join("; ")
    }
}

fn parse_risks(s: &str) -> Result<Vec<RiskEntry>, AggregateError> {
    split_entries(s)
        .iter()
        .map(|e| {
            RiskEntry::parse(e).ok_or_else(|| AggregateError::ModeMismatch(format!("unrecognized risk entry '{e}'")))
        })
        .collect()
}

/// Keeps the closest entry per hole, ordered by distance.
fn closest_per_hole(entries: impl IntoIterator<Item = RiskEntry>) -> Vec<RiskEntry> {
    let mut best: BTreeMap<String, RiskEntry> = BTreeMap::new();
    for e in entries {
        match best.get(&e.hole) {
            Some(cur) if cur.sort_key() <= e.sort_key() => {}
            _ => {
                best.insert(e.hole.clone(), e);
            }
        }
    }
    let mut v: Vec<RiskEntry> = best.into_values().collect();
    v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    v
}

fn render_risks(entries: &[RiskEntry]) -> String {
    join_entries(entries.iter().map(RiskEntry::render))
}

/// One outcome (or one episode) with its successor evaluation folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedItem {
    pub action: ActionId,
    pub action_index: usize,
    pub action_name: String,
    pub weight: f64,
    /// Terminal state observed directly, e.g. `(h) hole`.
    pub revealed: Option<String>,
    pub concept: ConceptEvaluation,
}

fn concepts(important: BTreeSet<String>, immediate: String, future: String, safest: String, fin: String) -> ConceptEvaluation {
    ConceptEvaluation {
        important_states: join_entries(important),
        immediate_risk: immediate,
        future_risk: future,
        safest_path: safest,
        final_evaluation: fin,
    }
}

/// G2: prepends the step `s -> a -> s'` to the successor's evaluation.
pub fn concept_fuse(state_name: &str, o: &OneStepOutcome) -> Result<FusedItem, AggregateError> {
    let a = &o.action_name;
    let n = &o.next_name;
    let prefix = format!("{state_name}{ARROW}{a}{ARROW}");
    let none = || NONE_TEXT.to_string();
    let (revealed, concept) = match o.next_kind {
        StateKind::Hole => {
            let tag = format!("{n} hole");
            let c = concepts(
                BTreeSet::from([tag.clone()]),
                format!("{prefix}{n}{HOLE_SUFFIX}{DISTANCE_SEP}1"),
                none(),
                none(),
                format!("Moving {a} from {state_name} falls into the hole {n}."),
            );
            (Some(tag), c)
        }
        StateKind::Goal => {
            let tag = format!("{n} goal");
            let c = concepts(
                BTreeSet::from([tag.clone()]),
                none(),
                none(),
                format!("{prefix}{n}{GOAL_SUFFIX}"),
                format!("Moving {a} from {state_name} reaches the goal {n}."),
            );
            (Some(tag), c)
        }
        StateKind::NonTerminal => match &o.next_value.content {
            _ if o.next_value.is_uninformed() => (
                None,
                concepts(
                    BTreeSet::new(),
                    none(),
                    none(),
                    none(),
                    format!("Moving {a} from {state_name} leads to {n}, which has no evaluation yet."),
                ),
            ),
            ValueContent::FreeText { text } => {
                return Err(AggregateError::ModeMismatch(format!("free-text value at {n}: {text}")))
            }
            ValueContent::Concepts(next) => {
                let mut risks = parse_risks(&next.immediate_risk)?;
                risks.extend(parse_risks(&next.future_risk)?);
                let shifted = closest_per_hole(risks.into_iter().map(|r| RiskEntry {
                    path: format!("{prefix}{}", r.path),
                    hole: r.hole,
                    distance: r.distance + 1,
                }));
                let safest = if is_none_text(&next.safest_path) {
                    none()
                } else {
                    format!("{prefix}{}", next.safest_path.trim())
                };
                (
                    None,
                    concepts(
                        split_entries(&next.important_states).into_iter().collect(),
                        none(),
                        render_risks(&shifted),
                        safest,
                        format!("Moving {a} from {state_name} leads to {n}."),
                    ),
                )
            }
        },
    };
    Ok(FusedItem {
        action: o.action,
        action_index: o.action_index,
        action_name: a.clone(),
        weight: o.weight,
        revealed,
        concept,
    })
}

fn steps_text(n: usize) -> String {
    if n == 1 {
        "1 step".to_string()
    } else {
        format!("{n} steps")
    }
}

fn list_text(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// G1: combines fused items of one state into a single evaluation.
pub fn concept_join(state_name: &str, items: &[FusedItem]) -> Result<ConceptEvaluation, AggregateError> {
    if items.is_empty() {
        return Err(AggregateError::Usage(format!("nothing to aggregate for {state_name}")));
    }
    let total: f64 = items.iter().map(|i| i.weight).sum();
    if !(total > 0.0) || items.iter().any(|i| i.weight < 0.0 || !i.weight.is_finite()) {
        return Err(AggregateError::Usage(format!("item weights for {state_name} are not a distribution")));
    }

    let mut immediate: Vec<RiskEntry> = Vec::new();
    let mut future: Vec<RiskEntry> = Vec::new();
    let mut risky_actions = BTreeSet::new();
    let mut hole_mass = 0.0;
    for item in items {
        let imm = parse_risks(&item.concept.immediate_risk)?;
        if !imm.is_empty() {
            risky_actions.insert(item.action_index);
            hole_mass += item.weight;
        }
        immediate.extend(imm);
        future.extend(parse_risks(&item.concept.future_risk)?);
    }
    immediate.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    immediate.dedup();
    let future = closest_per_hole(future);

    // best path: risk-free first action, then reaching the goal, then length
    let candidates: Vec<((bool, bool, usize), &FusedItem)> = items
        .iter()
        .filter(|i| !is_none_text(&i.concept.safest_path))
        .filter_map(|i| {
            parse_path(&i.concept.safest_path)
                .map(|p| ((risky_actions.contains(&i.action_index), !p.goal, p.steps), i))
        })
        .collect();
    let chosen = candidates
        .iter()
        .min_by(|(ka, a), (kb, b)| {
            (ka, a.action_index, a.concept.safest_path.trim()).cmp(&(kb, b.action_index, b.concept.safest_path.trim()))
        })
        .map(|(k, i)| (*k, *i));
    let best: Vec<&FusedItem> = match chosen {
        Some((key, _)) => candidates.iter().filter(|(k, _)| *k == key).map(|(_, i)| *i).collect(),
        None => Vec::new(),
    };

    let mut important: BTreeSet<String> = items.iter().filter_map(|i| i.revealed.clone()).collect();
    for item in &best {
        important.extend(split_entries(&item.concept.important_states));
    }
    important.extend(immediate.iter().chain(&future).map(|r| format!("{} hole", r.hole)));

    let mut sentences = Vec::new();
    let hole_prob = hole_mass / total;
    if hole_prob > 0.0 {
        sentences.push(format!(
            "From {state_name} there is a {hole_prob:.3} probability of falling into a hole on the next step."
        ));
    }
    match chosen {
        Some(((risky, not_goal, steps), _)) => {
            let mut actions: Vec<(usize, String)> =
                best.iter().map(|i| (i.action_index, i.action_name.clone())).collect();
            actions.sort();
            actions.dedup();
            let names: Vec<String> = actions.into_iter().map(|(_, n)| n).collect();
            let start = list_text(&names);
            if not_goal {
                sentences.push(format!(
                    "A safe path of {} is known from {state_name}, starting with {start}.",
                    steps_text(steps)
                ));
            } else {
                sentences.push(format!(
                    "The goal can be reached from {state_name} in {}, starting with {start}.",
                    steps_text(steps)
                ));
            }
            if risky {
                sentences.push("Every known path starts with an action that can fall into a hole.".into());
            }
        }
        None => sentences.push(format!("No path to the goal is known yet from {state_name}.")),
    }
    if !future.is_empty() {
        sentences.push(format!("Holes can be reached later along {} known path(s).", future.len()));
    }

    Ok(concepts(
        important,
        render_risks(&immediate),
        render_risks(&future),
        chosen.map_or_else(|| NONE_TEXT.to_string(), |(_, i)| i.concept.safest_path.trim().to_string()),
        sentences.join(" "),
    ))
}

/// Indices whose (rank, shorter path) key is maximal under `rank_value`.
pub fn select_best(scores: &[ConceptScore], rank_value: impl Fn(ConceptRank) -> i64) -> Vec<usize> {
    let key = |s: &ConceptScore| {
        let (holes, length, nearest) = s.tie_key();
        (s.rank != ConceptRank::ImmediateRisk, holes, nearest, rank_value(s.rank), length)
    };
    let Some(top) = scores.iter().map(key).max() else {
        return Vec::new();
    };
    scores.iter().enumerate().filter(|(_, s)| key(s) == top).map(|(i, _)| i).collect()
}

fn describe(s: &ConceptScore) -> String {
    let len = |n: Option<usize>| n.map(steps_text).unwrap_or_else(|| "an unknown number of steps".into());
    match s.rank {
        ConceptRank::ReachesGoal => format!("reaches the goal in {}", len(s.path_length)),
        ConceptRank::SafeProgress => format!("has a safe path of {}", len(s.path_length)),
        ConceptRank::Unknown => "has no known path".into(),
        ConceptRank::FutureRisk => "may lead to a hole later".into(),
        ConceptRank::ImmediateRisk => "can fall into a hole immediately".into(),
    }
}

/// Uniform distribution over the best-scoring actions, with a comparison text.
pub fn improve_policy_deterministic(state_name: &str, per_action: &[(String, ConceptScore)]) -> (Vec<f64>, String) {
    let n = per_action.len();
    if n == 0 {
        return (Vec::new(), format!("No actions are available at {state_name}."));
    }
    if per_action.iter().all(|(_, s)| s.rank == ConceptRank::Unknown) {
        return (vec![1.0 / n as f64; n], format!("At {state_name}: insufficient information; all actions kept."));
    }
    let scores: Vec<ConceptScore> = per_action.iter().map(|(_, s)| *s).collect();
    let best = select_best(&scores, ConceptRank::ordinal);
    let mut dist = vec![0.0; n];
    for &i in &best {
        dist[i] = 1.0 / best.len() as f64;
    }
    let chosen: Vec<String> = best.iter().map(|&i| per_action[i].0.clone()).collect();
    let mut thought =
        format!("At {state_name}: chosen {} ({}).", list_text(&chosen), describe(&scores[best[0]]));
    let others: Vec<String> = per_action
        .iter()
        .enumerate()
        .filter(|(i, _)| !best.contains(i))
        .map(|(_, (name, s))| format!("{name} ({})", describe(s)))
        .collect();
    if !others.is_empty() {
        thought.push_str(&format!(" Otherwise: {}.", others.join("; ")));
    }
    (dist, thought)
}

/// Symbolic G1/G2 over concept documents.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicAggregator;

impl DeterministicAggregator {
    fn join_outcomes(
        ctx: &StateContext,
        outcomes: &[OneStepOutcome],
        weight: impl Fn(&OneStepOutcome) -> f64,
    ) -> Result<Estimate, AggregateError> {
        let items = outcomes
            .iter()
            .map(|o| {
                concept_fuse(&ctx.state_name, o).map(|mut item| {
                    item.weight = weight(o);
                    item
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Estimate::new(ValueContent::Concepts(concept_join(&ctx.state_name, &items)?)))
    }
}

fn trajectory_item(state_name: &str, t: &RenderedTrajectory, weight: f64) -> Result<FusedItem, AggregateError> {
    let first = t
        .steps
        .first()
        .ok_or_else(|| AggregateError::Usage(format!("empty episode from {state_name}")))?;
    let mut path = state_name.to_string();
    for st in &t.steps {
        path.push_str(&format!("{ARROW}{}{ARROW}{}", st.action_name, st.next_name));
    }
    let last = t.steps.last().expect("non-empty");
    let n = t.steps.len();
    let none = || NONE_TEXT.to_string();
    let (revealed, immediate, future, safest, fin) = match (t.terminated, last.next_kind) {
        (true, StateKind::Goal) => (
            Some(format!("{} goal", last.next_name)),
            none(),
            none(),
            format!("{path}{GOAL_SUFFIX}"),
            format!("This episode reaches the goal in {}.", steps_text(n)),
        ),
        (true, StateKind::Hole) => {
            let risk = format!("{path}{HOLE_SUFFIX}{DISTANCE_SEP}{n}");
            let (imm, fut) = if n == 1 { (risk, none()) } else { (none(), risk) };
            (
                Some(format!("{} hole", last.next_name)),
                imm,
                fut,
                none(),
                format!("This episode falls into a hole after {}.", steps_text(n)),
            )
        }
        _ => (None, none(), none(), none(), TRUNCATION_SENTENCE.to_string()),
    };
    Ok(FusedItem {
        action: first.action,
        action_index: first.action.0,
        action_name: first.action_name.clone(),
        weight,
        revealed: revealed.clone(),
        concept: concepts(revealed.into_iter().collect(), immediate, future, safest, fin),
    })
}

impl Aggregator for DeterministicAggregator {
    fn kind(&self) -> AggregatorKind {
        AggregatorKind::Deterministic
    }

    fn action_value(&self, ctx: &StateContext, outcomes: &[OneStepOutcome]) -> Result<Estimate, AggregateError> {
        Self::join_outcomes(ctx, outcomes, |o| o.probability)
    }

    fn state_value(
        &self,
        ctx: &StateContext,
        outcomes: &[OneStepOutcome],
        _action_values: &[ActionEval],
    ) -> Result<Estimate, AggregateError> {
        Self::join_outcomes(ctx, outcomes, |o| o.weight)
    }

    fn trajectory_value(
        &self,
        ctx: &StateContext,
        trajectories: &[RenderedTrajectory],
    ) -> Result<Estimate, AggregateError> {
        let w = 1.0 / trajectories.len() as f64;
        let items = trajectories
            .iter()
            .map(|t| trajectory_item(&ctx.state_name, t, w))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Estimate::new(ValueContent::Concepts(concept_join(&ctx.state_name, &items)?)))
    }
}

/// Improvement by concept score.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicImprover;

impl Improver for DeterministicImprover {
    fn improve(&self, ctx: &StateContext, per_action: &[ActionEval]) -> Result<Improvement, AggregateError> {
        let scored = per_action
            .iter()
            .map(|e| {
                e.value.content.concepts().map(|c| (e.action_name.clone(), score_concepts(c))).ok_or_else(|| {
                    AggregateError::ModeMismatch(format!("free-text action value for {}", e.action_name))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (distribution, thought) = improve_policy_deterministic(&ctx.state_name, &scored);
        Ok(Improvement { distribution, thought, scores: Some(scored.into_iter().map(|(_, s)| s).collect()) })
    }
}
