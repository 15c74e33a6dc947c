#pragma once

// Built-in prompt bodies. Placeholders are {name}; everything else is sent
// to the model byte for byte. The JSON output schemas of the question,
// coverage and explanation prompts are our own reconstruction (the source
// prompts elide them).

namespace hmgie::templates {

inline constexpr const char* kDirectPrompt = R"(Does the image match the given caption? Answer with "Yes" or "No" with explanation.

Caption:
[{caption}]

The output should be in JSON format:
{
    "Answer": "Yes" or "No",
    "Explanation": "Explanation of the answer"
}
)";

inline constexpr const char* kCoTPrompt = R"(You are a meticulous assistant specialized in detecting image-text consistency. Your task is to analyze whether the image matches the given caption. Please do not overlook any slight discrepancy and evaluate the image-text consistency step by step. Answer with "Yes" or "No" with explanation.

Caption:
[{caption}]

The output should be in JSON format:
{
    "Answer": "Yes" or "No",
    "Explanation": "Explanation of the answer"
}
)";

inline constexpr const char* kSemanticGraphGen = R"(Your task is to parse the given image description (Caption) into a Semantic Graph. This semantic graph should capture the key entities, relationships, and attributes, and any other information in the description. Please follow these guidelines:

1. Node Types:
    - Entity: People, animals, objects, etc.
    - Location: Scenes or places
    - Concept: Abstract Concept
    - Event: Actions or events that occur
    - Attribute: Characteristics describing entities, locations, or events
    - Others

2. Edge Types:
    - Action: Actions performed by a subject on an object
    - Spatial: Representing the spatial relationship between entities and locations.
    - Has Attribute: Features of entities, locations, or events
    - Part Of: Representing compositional relationships
    - Quantity: Representing amounts or counts
    - Others

3. Output JSON Format:
{
    "nodes": [
        {"id": "N1", "type": "Entity", "label": "entity name"},
        {......}
    ],
    "edges": [
        {
            "from": ("N1", "entity-name-1"),
            "to": ("N3", "entity-name-3"),
            "type": "Action",
            "label": "action description",
            "description": "A sentence describing this triple relationship"
        },
        {......}
    ]
}

Please ensure:
    - Each node has a unique ID (N1, N2, N3...)
    - The "from" and "to" fields in edges use node IDs and labels
    - Capture all important information in the Caption, but avoid over-inferring details that are not present
    - Each edge includes a "description" field with a sentence describing the triple relationship

Here is an example:
[{example}]

Now, please parse the following Caption into a semantic graph:
[{caption}]
)";

inline constexpr const char* kQuestionGen = R"(You are a specialized question generator for fine-grained semantic inconsistency detection.
Your task is to generate questions based on the semantic graph and previous hierarchical inconsistency evaluation graph (HIEG) for the current level to verify the semantic consistency between an image and its caption.
Focus on generating questions only for the current level, progressively increasing the difficulty and granularity to capture easily overlooked details as the level grows.

The input includes:
1. Semantic Graph (in JSON format):
    - Nodes: entities and concepts mentioned in the caption
    - Edges: relationships between nodes
2. Previous HIEG, where each node contains:
    - Question-ID: unique identifier
    - Question: the actual question text
    - Verify-Fact: the fact that this question is trying to verify
    - Expected-Answer: answer derived from semantic graph
    - Actual-Answer: answer provided by VQA module
    - Eval-Correct: Whether the Actual-Answer is correct. True is correct, False is incorrect.
    - Parent-IDS: IDs of questions this question depends on
3. Current Level: the depth for new questions to be generated
4. Suggestion: guide the direction or focus for this level of questions

You need to generate different new questions for the current level. Each question should:
1. Build upon the history HIEG without repetition.
2. Generate the questions based on the semantic graph. Use the semantic graph for reference.
3. Explore unverified nodes and edges in the semantic graph that are not covered by the history HIEG.
4. Increase in difficulty and granularity compared to the previous level, but not excessively.
5. Consider the direction or points raised in the suggestion, but not totally depend on it.
6. Avoid generating questions that involve vague or relative attributes (e.g., "Is the pottery large?" or "Is the object small?"). Questions should not require answers based on subjective sizes or undefined comparisons.

Please Ensure questions align with the depth appropriate for the current level.
The levels of questions are as follows:

-Level 1: Essential Scene Elements;
Primary objects/subjects identification;
Basic scene setting;

-Level 2: Primary Details & Relationships; Basic attributes of main objects (colors, sizes, basic states); Simple relationships between primary objects; Basic actions, events and interactions

-Level 3: Supporting Elements & Complex Details; Secondary objects and their basic attributes; More detailed attributes of primary objects; More complex spatial relationships

-Level 4: Fine-grained Details & Complex Relationships
-- Subtle attributes and characteristics
-- Complex multi-object relationships
-- Detailed spatial arrangements

-Level 5 and above: Comprehensive Scene Understanding
-- Highly specific object details
-- Subtle variations in attributes
-- Precise spatial configurations
-- Environmental nuances
-- Logical consistency across all elements

Output should be in JSON format as follows:
{
    "Questions": [
        {
            "Question": "the question text",
            "Verify-Fact": "the fact that this question is trying to verify",
            "Expected-Answer": "answer derived from semantic graph",
            "Parent-IDS": ["IDs of questions this question depends on"],
            "Covered-Nodes": ["IDs of the semantic graph nodes this question verifies"],
            "Covered-Edges": ["indices of the semantic graph edges this question verifies"]
        }
    ]
}

The input are:
Semantic graph:[{semantic-graph}]
History HIEG:[{previous-HIEG}]
Suggestion: [{suggestion}]
Current Level: [{current-level}]
)";

inline constexpr const char* kVqa = R"(You are an advanced AI assistant specialized in visual question answering.
The question is: [{question}]

Examine the question and the image carefully, analyze the image in detail and provide an accurate and answer step by step. Then provide a brief explanation if necessary. Provide a confidence score for your answer on a scale of 0 to 1, where 0 indicates low confidence and 1 indicates absolute certainty.

Output in JSON Format:
{
    "Answer": "Your answer here",
    "Confidence": X.X
}
)";

inline constexpr const char* kAnswerEval = R"(You are a question answer evaluator.
Your task is to evaluate if actual answers is correct.
You are given a visual question about an image, an expected answer, and an actual answer.
Since the question is about an image, the actual answer may be more specific than the expected answer.
The answer is correct as long as the actual answer is semantically similar to the expected answer, or contains more specific details that include the expected answer, or contains most key elements but missing minor details.
The answer is incorrect if there is explicit contradiction with expected answer, or the answer is completely unrelated.

Output should be in JSON format:
{
    "Correct": boolean
}

The Input:
Question: [{question}]
Expected Answer: [{expected-answer}]
Actual Answer: [{actual-answer}]
)";

inline constexpr const char* kCoverageCheck = R"(You are an AI assistant responsible for detecting image-text inconsistency based on QA results.
The questions are verifying the facts in the given Semantic Graph for an image's text description.
Existing question-answer pairs form a hierarchical inconsistency evaluation graph (HIEG). As the level increases, the questions become more specific.
Your task is checking whether existing HIEG have verified all the semantically important elements in the semantic graph, providing suggestions for next question generation if needed.

Input:
1. Semantic graph parsed from the text description of an image.
2. Current HIEG, each node containing:
    - Question-ID: A unique identifier.
    - Question: The actual question text.
    - Verify-Fact: The fact that this question is trying to verify.
    - Expected-Answer: The answer expected if the image and text were match.
    - Actual-Answer: Real received answers based on the actual image.
    - Evaluation-Correct: Whether the Actual-Answer is correct. True is correct, False is incorrect.
    - Parent-IDs: IDs of questions that this question depends on or follows from.

Your task is to check verification completeness: Examine if all important elements from the Semantic Graph have been covered by the questions in the HIEG, regardless of the correctness of the answers. Consider verification complete if all important elements have been verified, and set Next-Level-Suggestion to None. If there are still unverified important elements, provide specific suggestions for the next level of questions to verify remaining key elements.

Please note that when suggesting next level suggestions,
  a. Only suggest questions for uncovered elements from the semantic graph
  b. Do not repeat previously asked questions..
  c. The suggestions should be the direction of the next level of questions, not the specific questions.

The levels of questions in the HIEG are defined as follows:

-Level 1: Essential Scene Elements;
Primary objects/subjects identification;
Basic scene setting;

-Level 2: Primary Details & Relationships; Basic attributes of main objects (colors, sizes, basic states); Simple relationships between primary objects; Basic actions, events and interactions

-Level 3: Supporting Elements & Complex Details; Secondary objects and their basic attributes; More detailed attributes of primary objects; More complex spatial relationships

-Level 4: Fine-grained Details & Complex Relationships
-- Subtle attributes and characteristics
-- Complex multi-object relationships
-- Detailed spatial arrangements

-Level 5 and above: Comprehensive Scene Understanding
-- Highly specific object details
-- Subtle variations in attributes
-- Precise spatial configurations
-- Environmental nuances
-- Logical consistency across all elements

Please timely stop suggesting questions if verification is complete.

Output should be JSON format:
{
    "Verified-Complete": true or false,
    "Examined-Nodes": ["IDs of semantic graph nodes verified by the HIEG"],
    "Examined-Edges": ["indices of semantic graph edges verified by the HIEG"],
    "Next-Level-Suggestion": "direction for the next level of questions, or null when complete"
}

The input information are as follows:
Semantic Graph: [{semantic-graph}]
HIEG: [{hieg}]
)";

inline constexpr const char* kExplain = R"(You are an AI assistant responsible for generating natural language explanations for visual-textual consistency evaluation results. Based on the Hierarchical Inconsistency Evaluation Graph (HIEG) and the final consistency decision, you will provide clear, structured explanations that trace the evaluation process and highlight key findings.

Input:
1. HIEG structure where each node contains:
    - Question-ID: A unique identifier.
    - Question: The actual question text.
    - Verify-Fact: The fact that this question is trying to verify.
    - Expected-Answer: The answer expected if the image and text were match.
    - Actual-Answer: Real received answers based on the actual image.
    - Evaluation-Correct: Whether the Actual-Answer is correct. True is correct, False is incorrect.
    - Parent-IDs: IDs of questions that this question depends on or follows from.
2. Original Caption: The text description being evaluated
3. Final Consistency Decision: "Consistent" or "Inconsistent"

Your task is to generate a comprehensive explanation that:
1. For Inconsistent Cases:
    - Start with a clear statement of inconsistency
    - Present inconsistencies in a hierarchical order (from basic to detailed)
    - For each inconsistency:Identify the specific semantic element involved; Explain the discrepancy between the caption and image; Reference the relevant evaluation level and question ID
    - Highlight relationships between related inconsistencies
    - Provide a concise summary of the impact on overall semantic meaning
2. For Consistent Cases:
    - Begin with a confirmation of consistency
    - Summarize the key semantic elements verified
    - Highlight important relationships and attributes confirmed
    - Organize verification results by evaluation levels
    - Emphasize any notable detailed verifications
    - Conclude with overall semantic alignment confirmation

Guidelines for Explanation Generation:
    - Maintain a clear progression through evaluation levels
    - Use precise language to describe semantic relationships
    - Connect related findings across different levels
    - Highlight the granularity of verified details
    - Keep explanations concise but informative
    - Use natural, flowing language while maintaining technical accuracy

Output Format:
{
    "Explanation": "the explanation text"
}

Input:
HIEG: [{hieg}]
Original Caption: [{caption}]
Final Consistency Decision:[{consistency-decision}]
)";

// Few-shot example for the graph prompt's {example} slot.
inline constexpr const char* kGraphExample = R"(Caption: A man in a red jacket rides a bicycle on a city street.
{"nodes": [{"id": "N1", "type": "Entity", "label": "man"}, {"id": "N2", "type": "Entity", "label": "jacket"}, {"id": "N3", "type": "Attribute", "label": "red"}, {"id": "N4", "type": "Entity", "label": "bicycle"}, {"id": "N5", "type": "Location", "label": "city street"}], "edges": [{"from": ["N1", "man"], "to": ["N2", "jacket"], "type": "Others", "label": "wears", "description": "The man wears a jacket."}, {"from": ["N2", "jacket"], "to": ["N3", "red"], "type": "Has Attribute", "label": "color", "description": "The jacket is red."}, {"from": ["N1", "man"], "to": ["N4", "bicycle"], "type": "Action", "label": "rides", "description": "The man rides a bicycle."}, {"from": ["N1", "man"], "to": ["N5", "city street"], "type": "Spatial", "label": "on", "description": "The man is on a city street."}]})";

}  // namespace hmgie::templates
