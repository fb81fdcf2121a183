//! Prompt templates for the in-loop decisions. Adjudicators (real or
//! scripted) route on the request tag and read the labelled lines below.

use crate::geometry::Point2;
use crate::model_gateway::{ChatRequest, ReplySchema, Turn};
use crate::physical_space::Frontier;

pub const PROMPT_VERSION: u32 = 1;

pub const TAG_FRONTIER: &str = "frontier-choice";
pub const TAG_VERIFY: &str = "verify-target";
pub const TAG_READY: &str = "ready-check";
pub const TAG_ANSWER: &str = "answer";
pub const TAG_JUDGE: &str = "judge";

const FRONTIER_SYSTEM: &str = "You guide a household robot exploring an unknown building. Frontiers are boundaries between explored and unexplored space. Pick the frontier most likely to lead to the target.";
const VERIFY_SYSTEM: &str = "You check whether a household robot has really found the object it is looking for.";
const READY_SYSTEM: &str = "You decide whether a household robot has gathered enough evidence to complete its task.";
const ANSWER_SYSTEM: &str = "You answer questions for a household robot using the images it has collected.";
const JUDGE_SYSTEM: &str = "You grade answers. Decide whether the candidate answer means the same as the reference answer.";

/// A frontier as shown to the adjudicator.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierView {
    pub centroid: Point2,
    pub size: usize,
    pub agent_dist: f64,
    pub landmark_dist: f64,
}

impl FrontierView {
    pub fn new(f: &Frontier, agent_dist: f64) -> Self {
        Self {
            centroid: f.centroid,
            size: f.size,
            agent_dist,
            landmark_dist: f.dist_to_retrieved,
        }
    }
}

fn fmt_dist(d: f64) -> String {
    if d.is_finite() {
        format!("{d:.2}")
    } else {
        "inf".into()
    }
}

/// Appends retrieved rules to a system prompt.
pub fn with_rules(system: &str, rules_block: &str) -> String {
    if rules_block.is_empty() {
        system.to_string()
    } else {
        format!("{system}\n\nLessons from earlier tasks:\n{rules_block}")
    }
}

pub fn frontier_request(
    instruction: &str,
    target: &str,
    agent: Point2,
    frontiers: &[FrontierView],
    landmarks: Option<&[Point2]>,
    current_image: &str,
) -> ChatRequest {
    let mut text = format!(
        "Task: {instruction}\nTarget: {target}\nAgent position: ({:.2}, {:.2})\n",
        agent.x, agent.y
    );
    if let Some(ls) = landmarks {
        text.push_str("Landmarks:\n");
        for p in ls {
            text.push_str(&format!("landmark: ({:.2}, {:.2})\n", p.x, p.y));
        }
    }
    text.push_str("Frontiers:\n");
    for (i, f) in frontiers.iter().enumerate() {
        text.push_str(&format!(
            "frontier {i}: centroid=({:.2}, {:.2}) size={} agent_dist={} landmark_dist={}\n",
            f.centroid.x,
            f.centroid.y,
            f.size,
            fmt_dist(f.agent_dist),
            fmt_dist(f.landmark_dist)
        ));
    }
    let schema = ReplySchema::IndexChoice {
        options: frontiers.len(),
    };
    text.push_str(&schema.instruction());
    ChatRequest::new(TAG_FRONTIER, schema, FRONTIER_SYSTEM)
        .turn(Turn::user(text).with_images([current_image.to_string()]))
}

pub fn verify_request(
    instruction: &str,
    target: &str,
    candidate: Point2,
    image: &str,
    rules_block: &str,
) -> ChatRequest {
    ChatRequest::new(TAG_VERIFY, ReplySchema::YesNo, with_rules(VERIFY_SYSTEM, rules_block)).turn(
        Turn::user(format!(
            "Task: {instruction}\nTarget: {target}\nCandidate position: ({:.3}, {:.3})\nIs the object at the candidate position the target of this task?\n{}",
            candidate.x,
            candidate.y,
            ReplySchema::YesNo.instruction()
        ))
        .with_images([image.to_string()]),
    )
}

pub fn ready_request(instruction: &str, target: &str, image: &str, rules_block: &str) -> ChatRequest {
    ChatRequest::new(TAG_READY, ReplySchema::YesNo, with_rules(READY_SYSTEM, rules_block)).turn(
        Turn::user(format!(
            "Task: {instruction}\nTarget: {target}\nIs the robot close enough to the target to complete the task now?\n{}",
            ReplySchema::YesNo.instruction()
        ))
        .with_images([image.to_string()]),
    )
}

pub fn answer_request(
    instruction: &str,
    target: &str,
    candidate: Option<Point2>,
    images: Vec<String>,
    rules_block: &str,
) -> ChatRequest {
    let mut text = format!("Task: {instruction}\nTarget: {target}\n");
    if let Some(c) = candidate {
        text.push_str(&format!("Candidate position: ({:.3}, {:.3})\n", c.x, c.y));
    }
    text.push_str(&ReplySchema::FreeText.instruction());
    ChatRequest::new(TAG_ANSWER, ReplySchema::FreeText, with_rules(ANSWER_SYSTEM, rules_block))
        .turn(Turn::user(text).with_images(images))
}

pub fn judge_request(question: &str, reference: &str, candidate: &str) -> ChatRequest {
    ChatRequest::new(TAG_JUDGE, ReplySchema::YesNo, JUDGE_SYSTEM).turn(Turn::user(format!(
        "Question: {question}\nReference answer: {reference}\nCandidate answer: {candidate}\nDo they match?\n{}",
        ReplySchema::YesNo.instruction()
    )))
}

/// Reads `label: (x, y)` from a prompt.
pub fn parse_point(text: &str, label: &str) -> Option<Point2> {
    let line = text.lines().find_map(|l| l.trim().strip_prefix(label))?;
    let inner = line.trim().trim_start_matches(':').trim();
    let inner = inner.strip_prefix('(')?.split(')').next()?;
    let mut it = inner.split(',').map(|s| s.trim().parse::<f64>());
    Some(Point2::new(it.next()?.ok()?, it.next()?.ok()?))
}

/// Reads `label: value` from a prompt.
pub fn parse_field<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(label))
        .map(|rest| rest.trim().trim_start_matches(':').trim())
}

/// Parsed `frontier i:` line: (centroid, agent_dist, landmark_dist).
pub fn parse_frontier_lines(text: &str) -> Vec<(Point2, f64, f64)> {
    let num = |s: &str| -> f64 {
        if s == "inf" {
            f64::INFINITY
        } else {
            s.parse().unwrap_or(f64::INFINITY)
        }
    };
    text.lines()
        .filter(|l| l.starts_with("frontier "))
        .filter_map(|l| {
            let c = parse_point(l.split_once(':')?.1.trim().strip_prefix("centroid=")?.trim_start(), "")?;
            let field = |k: &str| l.split_whitespace().find_map(|w| w.strip_prefix(k)).map(num);
            Some((c, field("agent_dist=")?, field("landmark_dist=")?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontier_prompt_round_trip() {
        let fs = vec![
            FrontierView {
                centroid: Point2::new(1.0, -2.5),
                size: 4,
                agent_dist: 1.5,
                landmark_dist: f64::INFINITY,
            },
            FrontierView {
                centroid: Point2::new(3.25, 0.0),
                size: 9,
                agent_dist: 3.0,
                landmark_dist: 0.75,
            },
        ];
        let req = frontier_request("find the sofa", "sofa", Point2::new(0.0, 0.0), &fs, Some(&[Point2::new(3.0, 0.5)]), "img");
        let text = req.last_user_text();
        let parsed = parse_frontier_lines(text);
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, Point2::new(1.0, -2.5));
        assert!(parsed[0].2.is_infinite());
        assert_eq!(parsed[1].2, 0.75);
        assert!(text.contains("Landmarks:"));
        assert_eq!(req.schema, ReplySchema::IndexChoice { options: 2 });
    }

    #[test]
    fn labelled_fields() {
        let req = verify_request("what color is the mug in the kitchen", "mug", Point2::new(1.5, 2.25), "img", "");
        let text = req.last_user_text();
        assert_eq!(parse_point(text, "Candidate position"), Some(Point2::new(1.5, 2.25)));
        assert_eq!(parse_field(text, "Target"), Some("mug"));
        assert_eq!(parse_field(text, "Task"), Some("what color is the mug in the kitchen"));
        assert!(!req.system.contains("Lessons"));
        let req = verify_request("q", "mug", Point2::new(0.0, 0.0), "img", "[x] (if-then)\na -> b\n");
        assert!(req.system.contains("a -> b"));
    }
}
