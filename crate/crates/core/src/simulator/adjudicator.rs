use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use super::{normalize_answer, parse_image_ref, visible_objects, SceneSpec, SensorConfig, TermKind, Vocabulary};
use crate::cognitive_controller::prompts::{self, parse_field, parse_frontier_lines, parse_point};
use crate::geometry::Pose;
use crate::model_gateway::{ChatModel, ChatRequest, GatewayError};

/// A rule containing this phrase makes verification and answering respect
/// the area a question names.
pub const AREA_RULE_PHRASE: &str = "outside the area named in the question";
/// Largest distance at which the target counts as close enough to answer.
pub const READY_RANGE: f64 = 2.0;
/// A candidate is judged by the nearest visible object within this radius.
pub const VERIFY_RADIUS: f64 = 0.75;
// Two views closer than this are "near each other".
const LOCALITY_RADIUS: f64 = 3.0;

const WORKFLOW: &str = r#"{"variables":[{"name":"frontier","description":"frontier chosen for exploration"},{"name":"candidate","description":"object that may be the target"},{"name":"area","description":"area named in the question"}],"functions":[{"name":"choose_frontier","description":"pick the next frontier to explore"},{"name":"verify_candidate","description":"confirm that the candidate is the target"},{"name":"answer_question","description":"answer from the collected views"}],"body":["while not candidate do set frontier to choose_frontier(frontier)","if verify_candidate(candidate, area) then return answer_question(candidate)","else set candidate to none"]}"#;

/// Rule-based stand-in for a vision-language model over simulator scenes.
/// It reads image handles back into poses and answers from scene ground
/// truth, routing on the request tag.
#[derive(Clone, Debug)]
pub struct SimAdjudicator {
    scenes: BTreeMap<String, Arc<SceneSpec>>,
    sensor: SensorConfig,
    vocab: Vocabulary,
}

struct View<'a> {
    scene: &'a SceneSpec,
    pose: Pose,
}

impl SimAdjudicator {
    pub fn new(scenes: impl IntoIterator<Item = Arc<SceneSpec>>, sensor: SensorConfig, vocab: &Vocabulary) -> Self {
        Self {
            scenes: scenes.into_iter().map(|s| (s.name.clone(), s)).collect(),
            sensor,
            vocab: vocab.clone(),
        }
    }

    pub fn add_scene(&mut self, scene: Arc<SceneSpec>) {
        self.scenes.insert(scene.name.clone(), scene);
    }

    fn view(&self, image: &str) -> Option<View<'_>> {
        let (name, pose) = parse_image_ref(image)?;
        Some(View {
            scene: self.scenes.get(&name)?,
            pose,
        })
    }

    fn visible<'a>(&self, v: &View<'a>) -> Vec<usize> {
        visible_objects(v.scene, &v.pose, &self.sensor)
    }

    fn named_area(&self, instruction: &str) -> Option<String> {
        self.vocab.terms_of(instruction, TermKind::Area).into_iter().next()
    }

    fn decompose(&self, instruction: &str) -> String {
        let (terms, _) = self.vocab.scan(instruction);
        let cats: Vec<&str> = terms
            .iter()
            .filter(|t| t.0 == TermKind::Category)
            .map(|t| t.1.as_str())
            .collect();
        let areas: Vec<&str> = terms.iter().filter(|t| t.0 == TermKind::Area).map(|t| t.1.as_str()).collect();
        let target = cats.first().copied().unwrap_or(instruction.trim());
        json!({
            "target": target,
            "relative_objects": cats.get(1..).unwrap_or(&[]),
            "relative_areas": areas,
        })
        .to_string()
    }

    fn locality(&self, req: &ChatRequest) -> bool {
        let imgs: Vec<&str> = req.images().collect();
        match (imgs.first().and_then(|i| self.view(i)), imgs.get(1).and_then(|i| self.view(i))) {
            (Some(a), Some(b)) => a.scene.name == b.scene.name && a.pose.xy().distance(b.pose.xy()) <= LOCALITY_RADIUS,
            _ => false,
        }
    }

    fn shows(&self, image: &str, target: &str) -> bool {
        self.view(image)
            .is_some_and(|v| self.visible(&v).iter().any(|&i| v.scene.objects[i].category == target))
    }

    fn frontier_choice(&self, text: &str) -> usize {
        if !text.contains("Landmarks:") {
            return 0;
        }
        parse_frontier_lines(text)
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(a.0.cmp(&b.0)))
            .map_or(0, |(i, _)| i)
    }

    fn verify(&self, req: &ChatRequest) -> bool {
        let text = req.last_user_text();
        let (Some(target), Some(task), Some(candidate)) = (
            parse_field(text, "Target"),
            parse_field(text, "Task"),
            parse_point(text, "Candidate position"),
        ) else {
            return false;
        };
        let Some(v) = req.images().next().and_then(|i| self.view(i)) else {
            return false;
        };
        let nearest = self
            .visible(&v)
            .into_iter()
            .map(|i| (i, v.scene.objects[i].xy().distance(candidate)))
            .filter(|(_, d)| *d <= VERIFY_RADIUS)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, _)) = nearest else { return false };
        let obj = &v.scene.objects[i];
        if obj.category != target {
            return false;
        }
        match self.named_area(task) {
            Some(area) if req.system.contains(AREA_RULE_PHRASE) => obj.area == area,
            _ => true,
        }
    }

    fn ready(&self, req: &ChatRequest) -> bool {
        let Some(target) = parse_field(req.last_user_text(), "Target") else {
            return false;
        };
        let Some(v) = req.images().next().and_then(|i| self.view(i)) else {
            return false;
        };
        self.visible(&v).into_iter().any(|i| {
            let o = &v.scene.objects[i];
            o.category == target && o.xy().distance(v.pose.xy()) <= READY_RANGE
        })
    }

    fn answer(&self, req: &ChatRequest) -> String {
        let text = req.last_user_text();
        let (Some(target), Some(task)) = (parse_field(text, "Target"), parse_field(text, "Task")) else {
            return "unknown".into();
        };
        let views: Vec<View> = req.images().filter_map(|i| self.view(i)).collect();
        let Some(first) = views.first() else {
            return "unknown".into();
        };
        let area = self.named_area(task).filter(|_| req.system.contains(AREA_RULE_PHRASE));
        let anchor = parse_point(text, "Candidate position").unwrap_or(first.pose.xy());
        let mut seen: Vec<usize> = Vec::new();
        for v in &views {
            for i in self.visible(v) {
                let o = &v.scene.objects[i];
                if v.scene.name == first.scene.name
                    && o.category == target
                    && area.as_deref().is_none_or(|a| o.area == a)
                    && !seen.contains(&i)
                {
                    seen.push(i);
                }
            }
        }
        let best = seen
            .into_iter()
            .min_by(|a, b| {
                let d = |i: usize| first.scene.objects[i].xy().distance(anchor);
                d(*a).total_cmp(&d(*b)).then(a.cmp(b))
            })
            .map(|i| &first.scene.objects[i]);
        match best {
            None => "unknown".into(),
            Some(o) if task.trim_end().ends_with('?') => o.attribute.clone().unwrap_or_else(|| "unknown".into()),
            Some(o) => o.category.clone(),
        }
    }

    fn rules(&self, req: &ChatRequest) -> String {
        let text = req.last_user_text();
        let question = parse_field(text, "Question").unwrap_or("");
        let mut rules = Vec::new();
        if text.contains("Deviations (") && self.named_area(question).is_some() {
            rules.push(json!({
                "form": "if-then",
                "anchor": "verify_candidate",
                "key": format!("the candidate lies {AREA_RULE_PHRASE}"),
                "value": "reject it and keep exploring that area",
            }));
        }
        rules.push(json!({
            "form": "situation-suggestion",
            "anchor": "choose_frontier",
            "key": "several frontiers are equally close",
            "value": "prefer the one leading to an unvisited room",
        }));
        json!({ "rules": rules }).to_string()
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.into()
}

impl ChatModel for SimAdjudicator {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let text = req.last_user_text();
        Ok(match req.tag.as_str() {
            "goal-decomposition" => self.decompose(parse_field(text, "Instruction").unwrap_or(text)),
            "locality" => yes_no(self.locality(req)),
            "explore-decision" => {
                let target = parse_field(text, "Target").unwrap_or("");
                yes_no(!req.images().any(|i| self.shows(i, target)))
            }
            prompts::TAG_FRONTIER => self.frontier_choice(text).to_string(),
            prompts::TAG_VERIFY => yes_no(self.verify(req)),
            prompts::TAG_READY => yes_no(self.ready(req)),
            prompts::TAG_ANSWER => self.answer(req),
            prompts::TAG_JUDGE => {
                let r = parse_field(text, "Reference answer").unwrap_or("");
                let c = parse_field(text, "Candidate answer").unwrap_or("");
                yes_no(!c.is_empty() && normalize_answer(r) == normalize_answer(c))
            }
            "workflow" => WORKFLOW.into(),
            "rules" => self.rules(req),
            other => return Err(GatewayError::Config(format!("simulator adjudicator has no handler for {other:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::model_gateway::{self, Reply};
    use crate::simulator::{format_image_ref, reference_scene};

    fn adj() -> SimAdjudicator {
        SimAdjudicator::new([Arc::new(reference_scene().clone())], SensorConfig::default(), Vocabulary::builtin())
    }

    fn img(x: f64, y: f64) -> String {
        format_image_ref(&reference_scene().name, &Pose::planar(x, y, 0.0))
    }

    #[test]
    fn goal_decomposition_longest_match() {
        let a = adj();
        let req = crate::semantic_space::decompose_goal(
            "Find the coffee table next to the sofa in the living room",
            &a,
            &crate::model_gateway::HashEmbedder::new(16, 0),
            16,
            0,
        )
        .unwrap();
        assert_eq!(req.target_object.text, "coffee table");
        assert_eq!(req.relative_objects[0].text, "sofa");
        assert_eq!(req.relative_areas[0].text, "living room");
    }

    #[test]
    fn locality_and_verification() {
        let a = adj();
        let s = reference_scene();
        let req = crate::episodic_memory::locality_request(&img(1.0, 1.0), &img(2.0, 2.0));
        assert_eq!(a.send(&req).unwrap(), "yes");
        let req = crate::episodic_memory::locality_request(&img(1.0, 1.0), &img(10.0, 2.0));
        assert_eq!(a.send(&req).unwrap(), "no");

        let (vi, vase) = s.objects.iter().enumerate().find(|(_, o)| o.category == "vase").unwrap();
        let near = img(vase.position[0] - 1.0, vase.position[1] - 0.5);
        let req = prompts::verify_request("What color is the vase?", "vase", vase.xy(), &near, "");
        assert_eq!(a.send(&req).unwrap(), "yes", "object {vi}");
        let req = prompts::verify_request("What color is the vase?", "sofa", vase.xy(), &near, "");
        assert_eq!(a.send(&req).unwrap(), "no");
        let req = prompts::ready_request("What color is the vase?", "vase", &near, "");
        assert_eq!(a.send(&req).unwrap(), "yes");
        let req = prompts::answer_request("What color is the vase?", "vase", Some(vase.xy()), vec![near], "");
        let c = model_gateway::complete(&a, &req).unwrap();
        assert_eq!(c.reply, Reply::Text(vase.attribute.clone().unwrap()));
    }

    #[test]
    fn frontier_choice_uses_landmarks_only_when_shown() {
        use crate::cognitive_controller::prompts::FrontierView;
        let f = |x: f64, l: f64| FrontierView {
            centroid: Point2::new(x, 0.0),
            size: 5,
            agent_dist: x,
            landmark_dist: l,
        };
        let fs = [f(1.0, 9.0), f(2.0, 3.0), f(3.0, 3.0)];
        let a = adj();
        let req = prompts::frontier_request("t", "vase", Point2::new(0.0, 0.0), &fs, Some(&[Point2::new(5.0, 0.0)]), "i");
        assert_eq!(a.send(&req).unwrap(), "1");
        let req = prompts::frontier_request("t", "vase", Point2::new(0.0, 0.0), &fs, None, "i");
        assert_eq!(a.send(&req).unwrap(), "0");
    }

    #[test]
    fn unknown_tag_is_an_error() {
        let req = ChatRequest::new("mystery", crate::model_gateway::ReplySchema::FreeText, "");
        assert!(adj().send(&req).is_err());
    }
}
