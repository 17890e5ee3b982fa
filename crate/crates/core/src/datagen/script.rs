//! Scenario scripts and the randomized corpus script builder.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::ObjectTemplate;
use crate::nn::derive_seed;

use super::{ROOT_HEIGHT, V_MAX};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("phase {0} has zero duration")]
    ZeroDuration(usize),
    #[error("carry phase {0} is not preceded by a reach or carry phase")]
    CarryWithoutReach(usize),
    #[error("script has no phases")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Approach,
    Reach,
    Carry,
    Place,
    Idle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub duration: usize,
    /// Approach: root standing spot. Carry/Place: object centroid target.
    /// Reach/Idle: unused.
    pub target: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hands {
    Left,
    Right,
    Both,
}

impl Hands {
    pub fn phrase(&self) -> &'static str {
        match self {
            Hands::Left => "the left hand",
            Hands::Right => "the right hand",
            Hands::Both => "both hands",
        }
    }
}

/// A scripted interaction: ordered phases plus scene setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub phases: Vec<Phase>,
    pub object_id: String,
    pub hands_used: Hands,
    pub prompt_template: String,
    /// Root start position on the ground plane.
    pub start_root: [f64; 2],
    /// Initial object centroid.
    pub object_spot: [f64; 3],
    /// Initial object yaw, radians about +z.
    pub object_yaw: f64,
    pub fps: f64,
}

impl ScenarioScript {
    pub fn total_frames(&self) -> usize {
        self.phases.iter().map(|p| p.duration).sum()
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.phases.is_empty() {
            return Err(ScriptError::Empty);
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.duration == 0 {
                return Err(ScriptError::ZeroDuration(i));
            }
            if p.kind == PhaseKind::Carry {
                let prev = i.checked_sub(1).map(|j| self.phases[j].kind);
                if !matches!(prev, Some(PhaseKind::Reach) | Some(PhaseKind::Carry)) {
                    return Err(ScriptError::CarryWithoutReach(i));
                }
            }
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        self.prompt_template
            .replace("{object}", &self.object_id)
            .replace("{hands}", self.hands_used.phrase())
    }

    /// Frame range (start inclusive, end exclusive) covering reach through
    /// the end of place: the scripted contact window.
    pub fn contact_window(&self) -> Option<(usize, usize)> {
        let mut t = 0;
        let mut start = None;
        let mut end = None;
        for p in &self.phases {
            match p.kind {
                PhaseKind::Reach => start = start.or(Some(t)),
                PhaseKind::Carry | PhaseKind::Place => end = Some(t + p.duration),
                _ => {}
            }
            t += p.duration;
        }
        start.zip(end)
    }
}

/// Corpus-level generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Holdout sequences per unseen object.
    pub holdout_per_object: usize,
    pub object_count: usize,
    pub unseen_count: usize,
    pub frames: usize,
    pub fps: f64,
    /// Canonical surface samples per template.
    pub template_samples: usize,
    /// Points per synthesized human cloud.
    pub human_cloud_points: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_sequences: 200,
            test_sequences: 40,
            holdout_per_object: 5,
            object_count: 15,
            unseen_count: 3,
            frames: 120,
            fps: 30.0,
            template_samples: 2048,
            human_cloud_points: 4096,
            seed: 1,
        }
    }
}

const VERBS_MOVE: [&str; 4] = ["carry", "move", "take", "bring"];
const VERBS_LIFT: [&str; 3] = ["lift", "raise", "pick"];

/// Closed prompt vocabulary: all tokens any generated prompt can contain.
pub fn vocabulary_for(object_ids: &[String]) -> Vec<String> {
    let mut v: Vec<String> = ["the", "with", "left", "right", "both", "hand", "hands"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(VERBS_MOVE.iter().map(|s| s.to_string()));
    v.extend(VERBS_LIFT.iter().map(|s| s.to_string()));
    v.extend(object_ids.iter().cloned());
    v.sort();
    v.dedup();
    v
}

/// Token ids for a prompt under a closed vocabulary; unknown words are
/// skipped.
pub fn tokenize(prompt: &str, vocab: &[String]) -> Vec<usize> {
    prompt
        .split_whitespace()
        .filter_map(|w| {
            let w = w.to_lowercase();
            vocab.iter().position(|v| *v == w)
        })
        .collect()
}

/// Builds one randomized script for `template`, deterministic in `seed`.
///
/// Scenes are set on tabletops: the object rests at ~0.75 m; the human
/// approaches from a ring around it, reaches, then either carries it to a
/// second spot and places it, or lifts it and holds.
pub fn build_script(template: &ObjectTemplate, frames: usize, fps: f64, seed: u64) -> ScenarioScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = 0.75;
    let rest_z = table - template.bottom_extent();
    let spot = Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rest_z);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let ring = rng.gen_range(1.2..2.0);
    let start = [spot.x + ring * angle.cos(), spot.y + ring * angle.sin()];
    // Stand this far back from the object along the approach direction.
    let stand_back = 0.42;
    let stand = Vector3::new(
        spot.x + stand_back * angle.cos(),
        spot.y + stand_back * angle.sin(),
        ROOT_HEIGHT,
    );
    let hands = match rng.gen_range(0..10) {
        0..=3 => Hands::Right,
        4..=6 => Hands::Left,
        _ => Hands::Both,
    };
    let lift_only = rng.gen_bool(0.3);
    // Proportional duration partition; approach takes the remainder.
    assert!(frames >= 24, "scripts need at least 24 frames");
    let frac = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        ((frames as f64 * rng.gen_range(lo..hi)).round() as usize).max(4)
    };
    let reach = frac(0.13, 0.19, &mut rng);
    let (phases, verb) = if lift_only {
        let carry = frac(0.17, 0.25, &mut rng);
        let idle = frac(0.12, 0.20, &mut rng);
        let approach = frames - reach - carry - idle;
        let lift = rng.gen_range(0.12..0.25);
        let verb = VERBS_LIFT[rng.gen_range(0..VERBS_LIFT.len())];
        (
            vec![
                Phase { kind: PhaseKind::Approach, duration: approach, target: stand.into() },
                Phase { kind: PhaseKind::Reach, duration: reach, target: spot.into() },
                Phase {
                    kind: PhaseKind::Carry,
                    duration: carry,
                    target: (spot + Vector3::new(0.0, 0.0, lift)).into(),
                },
                Phase { kind: PhaseKind::Idle, duration: idle, target: spot.into() },
            ],
            verb,
        )
    } else {
        let carry = frac(0.27, 0.37, &mut rng);
        let place = frac(0.13, 0.20, &mut rng);
        let approach = frames - reach - carry - place;
        // Keep the eased carry speed safely under V_MAX.
        let carry_s = carry as f64 / fps;
        let max_dist = (V_MAX * carry_s / 1.5 * 0.8).min(0.9);
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(0.3..max_dist.max(0.31));
        let lift = rng.gen_range(0.08..0.18);
        let carry_target = spot + Vector3::new(dist * dir.cos(), dist * dir.sin(), lift);
        let place_target = Vector3::new(carry_target.x, carry_target.y, rest_z);
        let verb = VERBS_MOVE[rng.gen_range(0..VERBS_MOVE.len())];
        (
            vec![
                Phase { kind: PhaseKind::Approach, duration: approach, target: stand.into() },
                Phase { kind: PhaseKind::Reach, duration: reach, target: spot.into() },
                Phase { kind: PhaseKind::Carry, duration: carry, target: carry_target.into() },
                Phase { kind: PhaseKind::Place, duration: place, target: place_target.into() },
            ],
            verb,
        )
    };
    ScenarioScript {
        phases,
        object_id: template.object_id.clone(),
        hands_used: hands,
        prompt_template: format!("{verb} the {{object}} with {{hands}}"),
        start_root: start,
        object_spot: spot.into(),
        object_yaw: rng.gen_range(0.0..std::f64::consts::TAU),
        fps,
    }
}

/// Scripts for a whole corpus: `(train, test, holdout)` with object
/// assignment round-robin over the split's object set.
pub fn build_corpus_scripts(
    cfg: &CorpusConfig,
    seen: &[&ObjectTemplate],
    unseen: &[&ObjectTemplate],
) -> (Vec<ScenarioScript>, Vec<ScenarioScript>, Vec<ScenarioScript>) {
    let mut train = Vec::with_capacity(cfg.train_sequences);
    for i in 0..cfg.train_sequences {
        let t = seen[i % seen.len()];
        train.push(build_script(t, cfg.frames, cfg.fps, derive_seed(cfg.seed, "train-script", i as u64)));
    }
    let mut test = Vec::with_capacity(cfg.test_sequences);
    for i in 0..cfg.test_sequences {
        let t = seen[i % seen.len()];
        test.push(build_script(t, cfg.frames, cfg.fps, derive_seed(cfg.seed, "test-script", i as u64)));
    }
    let mut holdout = Vec::new();
    for (oi, t) in unseen.iter().enumerate() {
        for k in 0..cfg.holdout_per_object {
            holdout.push(build_script(
                t,
                cfg.frames,
                cfg.fps,
                derive_seed(cfg.seed, "holdout-script", (oi * cfg.holdout_per_object + k) as u64),
            ));
        }
    }
    (train, test, holdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::objects::{make_template, object_recipes};

    fn ball() -> ObjectTemplate {
        make_template(&object_recipes()[0], 128, 3).unwrap()
    }

    #[test]
    fn built_scripts_validate_and_sum_to_frame_count() {
        let t = ball();
        for s in 0..50 {
            let script = build_script(&t, 120, 30.0, s);
            script.validate().unwrap();
            assert_eq!(script.total_frames(), 120);
            assert!(script.contact_window().is_some());
        }
    }

    #[test]
    fn carry_requires_reach() {
        let t = ball();
        let mut script = build_script(&t, 120, 30.0, 1);
        script.phases.remove(1);
        assert!(matches!(script.validate(), Err(ScriptError::CarryWithoutReach(_))));
    }

    #[test]
    fn prompt_expansion() {
        let t = ball();
        let mut script = build_script(&t, 120, 30.0, 2);
        script.prompt_template = "carry the {object} with {hands}".into();
        script.hands_used = Hands::Both;
        assert_eq!(script.prompt(), "carry the ball with both hands");
    }

    #[test]
    fn vocabulary_is_closed_over_prompts() {
        let ids: Vec<String> = object_recipes().iter().map(|r| r.id.to_string()).collect();
        let vocab = vocabulary_for(&ids);
        let t = ball();
        for s in 0..30 {
            let script = build_script(&t, 120, 30.0, s);
            for tok in script.prompt().split_whitespace() {
                assert!(vocab.iter().any(|v| v == tok), "token '{tok}' not in vocabulary");
            }
        }
    }
}
