use serde::{Deserialize, Serialize};

use super::PriorityTier;
use crate::model_gateway::{self, ChatModel, ChatRequest, Embedder, GatewayError, Reply, ReplySchema, Turn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalTerm {
    pub text: String,
    pub embedding: Vec<f32>,
}

/// An instruction split into what to find and what it is near.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub raw_instruction: String,
    pub target_object: GoalTerm,
    pub relative_objects: Vec<GoalTerm>,
    pub relative_areas: Vec<GoalTerm>,
}

impl GoalSpec {
    pub fn tiers(&self) -> [(PriorityTier, &[GoalTerm]); 3] {
        [
            (PriorityTier::Target, std::slice::from_ref(&self.target_object)),
            (PriorityTier::RelativeObject, &self.relative_objects),
            (PriorityTier::RelativeArea, &self.relative_areas),
        ]
    }
}

const DECOMPOSE_SYSTEM: &str = "You help an embodied robot plan a search. Split the instruction into the target object to find, other objects mentioned as reference points, and the rooms or areas mentioned.";

pub fn goal_request(instruction: &str, max_retries: usize) -> ChatRequest {
    let mut req = ChatRequest::new("goal-decomposition", ReplySchema::GoalDecomposition, DECOMPOSE_SYSTEM)
        .turn(Turn::user(format!(
            "Instruction: {instruction}\n{}",
            ReplySchema::GoalDecomposition.instruction()
        )));
    req.max_retries = max_retries;
    req
}

/// Asks the model to decompose `instruction` and embeds every component.
pub fn decompose_goal(
    instruction: &str,
    llm: &dyn ChatModel,
    embedder: &dyn Embedder,
    dim: usize,
    max_retries: usize,
) -> Result<GoalSpec, GatewayError> {
    if instruction.trim().is_empty() {
        return Err(GatewayError::Config("instruction is empty".into()));
    }
    let completion = model_gateway::complete(llm, &goal_request(instruction, max_retries))?;
    let Reply::Goal(reply) = completion.reply else {
        unreachable!("goal-decomposition schema yields a goal reply")
    };
    let embed_term = |text: &str| -> Result<GoalTerm, GatewayError> {
        Ok(GoalTerm {
            text: text.trim().to_string(),
            embedding: model_gateway::embed(embedder, text, dim)?,
        })
    };
    let terms = |v: &[String]| -> Result<Vec<GoalTerm>, GatewayError> {
        v.iter().filter(|t| !t.trim().is_empty()).map(|t| embed_term(t)).collect()
    };
    Ok(GoalSpec {
        raw_instruction: instruction.to_string(),
        target_object: embed_term(&reply.target)?,
        relative_objects: terms(&reply.relative_objects)?,
        relative_areas: terms(&reply.relative_areas)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::{HashEmbedder, ScriptedChat};
    use crate::topk::is_unit;

    #[test]
    fn scripted_decomposition() {
        let chat = ScriptedChat::constant(
            r#"{"target":"refrigerator","rel_objects":["counter"],"rel_areas":["kitchen"]}"#,
        );
        let e = HashEmbedder::new(32, 0);
        let g = decompose_goal("is the fridge next to the counter in the kitchen?", &chat, &e, 32, 2).unwrap();
        assert_eq!(g.target_object.text, "refrigerator");
        assert_eq!(g.relative_objects[0].text, "counter");
        assert_eq!(g.relative_areas[0].text, "kitchen");
        assert!(is_unit(&g.target_object.embedding, 1e-6));
    }

    #[test]
    fn empty_relative_lists() {
        let chat = ScriptedChat::constant(r#"{"target":"sofa","relative_objects":[],"relative_areas":[]}"#);
        let e = HashEmbedder::new(8, 0);
        let g = decompose_goal("find the sofa", &chat, &e, 8, 0).unwrap();
        assert!(g.relative_objects.is_empty() && g.relative_areas.is_empty());
    }

    #[test]
    fn malformed_replies_exhaust_retries() {
        let chat = ScriptedChat::constant("I think it's a fridge");
        let e = HashEmbedder::new(8, 0);
        let err = decompose_goal("find the fridge", &chat, &e, 8, 2).unwrap_err();
        assert_eq!(err.raw_reply(), Some("I think it's a fridge"));
        assert_eq!(chat.call_count(), 3);
    }
}
