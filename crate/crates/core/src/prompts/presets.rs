//! Built-in criteria for the benchmark datasets, with the step prompts
//! reproduced as published.

use super::TextCriterion;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub criterion: TextCriterion,
    /// Minimum raw-label count kept before Step 2b.
    pub dictionary_threshold: u64,
}

const CAMEL_DESCRIPTION: &str = "In the image, two young women are riding camels in the desert. They are sitting on the camels, which are carrying them across the sandy terrain. The women are wearing shorts and sandals, and they appear to be enjoying their ride. The camels are walking in the desert, and the background features a sandy landscape with some vegetation. This scene captures a moment of adventure and exploration in the desert, as the women experience the unique and exotic environment on the back of these animals.";

const DICT_SENTENCE: &str = "For example, if the input is given as \"{'a': 15, 'b': 25, 'c': 17}\", it means that the label 'a', 'b', and 'c' appeared 15, 25, 17 times in the data, respectively.";

const OBJECT_STEP3: &str = "Your job is to classify an object in the image. Based on the image description, determine the most appropriate category that best classifies the main object in the image. You must choose from the following options: [__CLASSES__].\n\nGive your answer in the following format: \"Answer: {object}\". If a situation arises where nothing is allocated, please assign it to the object that has the closest resemblance.";

fn example_block(description: &str) -> String {
    format!("\n\n\"\"\"\n{description}\n\"\"\"\n\n")
}

fn stanford40_action() -> TextCriterion {
    TextCriterion {
        criterion_id: "stanford40-action".into(),
        description: "Action".into(),
        step1_prompt: "Characterize the image using a well-detailed description. Describe the person's main action in words.".into(),
        step2a_prompt: format!(
            "You will be given a description of an image of a person performing an action. Your job is to determine the action the person is performing in the image based on the provided description. Please respond in the following format: \"Answer: {{action}}\".  For example, given the following description:{}Then an exemplar answer would be \"Answer: Riding a camel\".",
            example_block(CAMEL_DESCRIPTION)
        ),
        step2b_template: format!(
            "You will be provided a list of [__LEN__] human actions and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] actions. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a human action.\n\n{DICT_SENTENCE}\n\nWhen categorizing classes, consider the following criteria:\n\n1. Each cluster should have roughly the same number of images.\n2. Each cluster should not have multiple classes of different actions.\nNow you will be given a list of human actions and the number of classes, and the list of classes you answered previously.\n\nPlease output a list of human actions of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{{index}}: {{actions}}\". Make sure that you strictly follow the length condition, which means that {{index}} must range from 1 to [__NUM_CLASSES_CLUSTER__]."
        ),
        step3_template: "Your job is to classify an action the person in an image is performing. Based on the image description, determine the most appropriate human action category that best classifies the main action in the image. You must choose from the following options: [__CLASSES__].\n\nGive your answer in the following format: \"Answer: {action}\". Be as specific as possible to choose the closest action from the given list. If a situation arises where nothing is allocated, please assign it to the action that has the closest resemblance.".into(),
        k: 40,
    }
}

fn stanford40_mood() -> TextCriterion {
    TextCriterion {
        criterion_id: "stanford40-mood".into(),
        description: "Mood".into(),
        step1_prompt: "Describe the mood of the image.".into(),
        step2a_prompt: format!(
            "You will be given a description of the mood. Your job is to determine the mood based on the provided description. Please respond in the following format: \"Answer: {{mood}}\". For example, given the following description:{}Then an exemplar answer would be \"Answer: Enjoying\"",
            example_block(CAMEL_DESCRIPTION)
        ),
        step2b_template: format!(
            "You will be provided a list of [__LEN__] moods and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing the mood.\n\n{DICT_SENTENCE}\n\nWhen categorizing classes, consider the following criteria:\n\n1. Each cluster should have roughly the same number of images.\n2. Merge clusters with similar meanings.\n3. Each cluster should not have multiple classes of different moods.\n4. Each cluster represents a general mood and should not be too specific.\nNow you will be given a list of locations and the number of classes, and the list of classes you answered previously.\n\nPlease output a list of musical instruments of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{{index}}: {{mood}}\". Make sure that you strictly follow the length condition, which means that {{index}} must range from 1 to [__NUM_CLASSES_CLUSTER__]."
        ),
        step3_template: OBJECT_STEP3.into(),
        k: 4,
    }
}

fn location(criterion_id: &str, k: usize) -> TextCriterion {
    TextCriterion {
        criterion_id: criterion_id.into(),
        description: "Location".into(),
        step1_prompt: "Describe where the person is located.".into(),
        step2a_prompt: format!(
            "You will be given a description of the location. Your job is to determine the location where the person exists based on the provided description. Please respond in the following format: \"Answer: {{location}}\". For example, given the following description:{}Then an exemplar answer would be \"Answer: Desert\".",
            example_block(CAMEL_DESCRIPTION)
        ),
        step2b_template: format!(
            "You will be provided a list of [__LEN__] objects and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a location.\n\n{DICT_SENTENCE}\n\nWhen categorizing classes, consider the following criteria:\n\n1. Each cluster should have roughly the same number of images.\n2. Merge clusters with similar meanings.\n3. Each cluster should not have multiple classes of different locations.\n4. Each cluster represents a general location and should not be too specific.\nNow you will be given a list of locations and the number of classes, and the list of classes you answered previously.\n\nPlease output a list of musical instruments of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{{index}}: {{instrument}}\". Make sure that you strictly follow the length condition, which means that {{index}} must range from 1 to [__NUM_CLASSES_CLUSTER__]."
        ),
        step3_template: OBJECT_STEP3.into(),
        k,
    }
}

const PIANO_DESCRIPTION: &str = "The image features a young woman playing a grand piano, showcasing her musical talent and skill. The grand piano is a large, elegant, and sophisticated instrument, often used in classical music performances and concerts. The woman is sitting at the piano, her hands positioned on the keys, and she is likely in the process of playing a piece of music. The scene captures the beauty and artistry of music-making, as well as the dedication and passion of the performer.";

fn ppmi_instrument(k: usize) -> TextCriterion {
    // The superclass criteria are only used for the two-cluster variant.
    let superclass = if k == 2 {
        "When categorizing classes, consider the following criteria:\n1. Each cluster should have roughly the same number of images.\n2. Merge clusters with similar meanings with a superclass.\n\n"
    } else {
        ""
    };
    TextCriterion {
        criterion_id: format!("ppmi-instrument-{k}"),
        description: "Musical Instrument".into(),
        step1_prompt: "Characterize the image using a well-detailed description. Which musical instrument is the person playing?".into(),
        step2a_prompt: format!(
            "You will be given a description of an image of a person playing a musical instrument. Your job is to determine the musical instrument within the image based on the provided description. Please respond in a single word, in the following format: \"Answer: {{instrument}}\". For example, given the following description:{}Then an exemplar answer would be \"Answer: Piano\".",
            example_block(PIANO_DESCRIPTION)
        ),
        step2b_template: format!(
            "You will be provided a list of [__LEN__] objects and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories.\n\n{DICT_SENTENCE}\n\nYour job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a musical instrument.\n\nNow you will be given a list of musical instruments and the number of classes, and the list of classes you answered previously.\n\n{superclass}Please output a list of musical instruments of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{{index}}: {{instrument}}\". Make sure that you strictly follow the length condition, which means that {{index}} must range from 1 to [__NUM_CLASSES_CLUSTER__]."
        ),
        step3_template: "Your job is to classify a musical instrument the person is playing in the image. Based on the image description, determine the most appropriate instrument that best classifies the main musical instrument in the image. You must choose from the following options: [__CLASSES__].\n\nGive your answer in the following format: \"Answer: {instrument}\". Be as specific as possible to choose the closest instrument from the given list. If a situation arises where nothing is allocated, please assign it to the instrument that has the closest resemblance.".into(),
        k,
    }
}

fn object10(criterion_id: &str) -> TextCriterion {
    TextCriterion {
        criterion_id: criterion_id.into(),
        description: "Object".into(),
        step1_prompt: "Provide a brief description of the object in the given image.".into(),
        step2a_prompt: format!(
            "You will be given a description of an image. Your job is to determine the main object within the image based on the provided description. Please respond in a single word. For example, given the following description:{}An exemplar answer is \"Answer: Tree\".",
            example_block("The image features a large tree in the middle of a green field, with its branches casting a shadow on the grass. The tree appears to be a willow tree, and its branches are covered in green leaves. The sun is shining, creating a beautiful, serene atmosphere in the scene.")
        ),
        step2b_template: "You will be provided a list of [__LEN__] objects and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a category.\n\nYou must provide your answer in the following format \"Answer {index}: {object}\", where {index} is the index of the category and {object} is the object name representing the category. For example, if you think the first category is \"object\", then you should provide your answer as \"Answer 1: object\".\n\nAlso note that different species have to be in different categories.\n\nAlso, please provide a reason you chose the word for each category. You can provide your reason in the following format \"Reason {index}: {reason}\", where {index} is the index of the category and {reason} is the reason you chose the word for the category.".into(),
        step3_template: OBJECT_STEP3.into(),
        k: 10,
    }
}

fn cifar100_object() -> TextCriterion {
    TextCriterion {
        criterion_id: "cifar100-object".into(),
        description: "Object".into(),
        step1_prompt: "Provide a brief description of the main object in the given image. Focus on the main object.".into(),
        step2a_prompt: format!(
            "You will be given a description of an image. Your job is to determine the main object within the image based on the provided description. Please respond in a single word. For example, given the following description:{}An exemplar answer is \"Answer: Building\".",
            example_block("The image shows a city skyline with several tall buildings, including skyscrapers, in the background. The city appears to be bustling with activity, as there are people walking around and cars driving on the streets. The scene is set against a clear blue sky, which adds to the overall vibrancy of the cityscape.")
        ),
        step2b_template: "You will be provided a list of [__LEN__] objects and the number of occurrences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a category.\n\nYou must provide your answer in the following format \"Answer {index}: {object}\", where {index} is the index of the category and {object} is the object representing the category. For example, if you think the first category is \"station\", then you should provide your answer as \"Answer 1: station\".\n\nWhen categorizing classes, consider the following criteria:\n\n1. The sizes of each cluster should be similar. For instance, no cluster should have too many elements allocated, while certain clusters should not have too few elements assigned.\n2. Merge similar clusters. For example, [sparrow, eagle, falcon, owl, hawk] should be combined into a single cluster called 'birds of prey'.\n3. The cluster should be differentiated based on where the animals live.\n\nPlease output a list of objects of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{index}: {object}\". Make sure that you strictly follow the length condition, which means that {index} must range from 1 to [__NUM_CLASSES_CLUSTER__]".into(),
        step3_template: "Your job is to classify an image. Based on the image description, determine the most appropriate category that best classifies the main object in the image. You must choose from the following options: [__CLASSES__].\n\nGive your answer in the following format: \"Answer: {object}\". Be as specific as possible to choose the closest object from the given list. If a situation arises where nothing is allocated, please assign it to the object that has the closest resemblance.".into(),
        k: 20,
    }
}

const FACET_STEP3_HEAD: &str = "Based on the provided image description, classify the depicted occupation into one of the following categories:[__CLASSES__]\n\nIf none of the categories seem like a perfect fit, choose the one that most closely aligns with the description.\n\n";
const FACET_STEP3_TAIL: &str = "Please provide only the category as your answer without justification.";

/// Sentence appended to the occupation Step-3 prompt to counter gender bias.
pub const FAIRNESS_SENTENCE: &str = "If a man is doing a job that requires physical strength and effort and is making artistic product, he must be classified as an artistic occupation.";

fn facet_occupation(fair: bool) -> TextCriterion {
    let step3 = if fair {
        format!("{FACET_STEP3_HEAD}{FAIRNESS_SENTENCE}\n\n{FACET_STEP3_TAIL}")
    } else {
        format!("{FACET_STEP3_HEAD}{FACET_STEP3_TAIL}")
    };
    TextCriterion {
        criterion_id: if fair { "facet-occupation-fair" } else { "facet-occupation" }.into(),
        description: "Occupation".into(),
        step1_prompt: "Given the image, can you provide a description focusing on the occupation of the person depicted?".into(),
        step2a_prompt: format!(
            "You will receive a description of an image depicting an individual. Based on the provided description, deduce the person's occupation and respond in just a few words. For instance, if given the description:{}Your answer should simply be \"Nurse\".",
            example_block("The image shows an individual in a white protective suit, gloves, and a face mask, standing near a building. This attire indicates the person's profession is associated with healthcare, safety, or environmental defense. Their attire, especially the use of personal protective equipment (PPE), implies the nature of their job necessitates protection. The building suggests an urban or industrial context")
        ),
        // The published prompt writes the cluster count as a literal "4"; it
        // is a placeholder here so K stays configurable.
        step2b_template: "You have a list containing [__LEN__] unique expressions denoting different occupations. Their frequency of occurrence is represented as a dictionary. In this dictionary, each key signifies an occupation, and its corresponding value indicates the number of times that occupation appears in the list. Taking the example of {'riding a bicycle': 299, 'fishing': 258}, this means 'riding a bicycle' has been mentioned 299 times, while 'fishing' was mentioned 258 times.\n\nYour task is to organize these 160 expressions into [__NUM_CLASSES_CLUSTER__] distinct categories or clusters. Each of these clusters will correspond to a broader category of occupation.\n\nSubmit your response in the format: 'Answer {index}: {category}', where {index} represents the category number, and {category} is the descriptive term for that cluster. As an illustration, if you categorize the first cluster as 'Activities', then your response should be 'Answer 1: Activities'.\n\nPlease write the answer in a single occupation. For example, do not answer like 'A and B occupations'.\nFor creating these categories, adhere to the following guidelines:\n\n1. Endeavor to keep the sizes of the clusters relatively uniform. Meaning, avoid having one cluster that's significantly larger or smaller than the others.\n2. Group occupations with similar implications or meanings together.\n3. The broader categories should be distinct from one another, emphasizing different aspects or types of occupations.".into(),
        step3_template: step3,
        k: 4,
    }
}

fn places_place() -> TextCriterion {
    TextCriterion {
        criterion_id: "places-place".into(),
        description: "Place".into(),
        step1_prompt: "From what place is this photo taken? Provide a brief reason for your choice.".into(),
        step2a_prompt: format!(
            "You will be given a description of the place where the photo was taken. Your job is to label the place where the photo was taken based on the provided description. Please respond in the following format: \"Answer: {{place}}\". For example, given the following description:{}An exemplar answer would be \"Answer: Parking lot\"",
            example_block("This photo is taken from a viewpoint inside the covered area, looking out towards the parking lot. The reason for this answer is that the image shows the man standing next to the car in the parking lot, and the perspective of the photo is from inside the covered area, providing a clear view of the man and the car.")
        ),
        step2b_template: format!(
            "You will be provided a list of [__LEN__] places where the photo is taken and the number of occurences in a given dataset. Your job is to cluster [__LEN__] words into [__NUM_CLASSES_CLUSTER__] categories. Provide your answer as a list of [__NUM_CLASSES_CLUSTER__] words, each word representing a location.\n\n{DICT_SENTENCE}\n\nWhen categorizing classes, consider the following criteria:\n1. Each cluster should have roughly the same number of images.\n2. Merge clusters with similar meanings.\n3. Each cluster should not have multiple classes of different places.\n4. Each cluster represents a general place and should not be too specific.\n\nNow you will be given a list of places and the number of classes, and the list of classes you answered previously.\n\nPlease output a list of places of length [__NUM_CLASSES_CLUSTER__], in the following format: \"{{index}}: {{place}}\". Make sure that you strictly follow the length condition, which means that {{index}} must range from 1 to [__NUM_CLASSES_CLUSTER__]."
        ),
        step3_template: "Your job is to recognize a place in the image. Based on the image description, determine the most appropriate place that best classifies the place where the photo is taken. You must choose from the following options: [__CLASSES__].\n\nGive your answer in the following format: \"Answer: {place}\". Be as specific as possible to choose the closest place from the given list. If a situation arises where nothing is allocated, please assign it to the place that has the closest resemblance.".into(),
        k: 50,
    }
}

const NAMES: &[&str] = &[
    "stanford40-action",
    "stanford40-location",
    "stanford40-mood",
    "ppmi-instrument-7",
    "ppmi-instrument-2",
    "ppmi-location",
    "cifar10-object",
    "stl10-object",
    "cifar100-object",
    "facet-occupation",
    "facet-occupation-fair",
    "places-place",
];

pub fn preset_names() -> &'static [&'static str] {
    NAMES
}

pub fn preset(name: &str) -> Option<Preset> {
    let (criterion, dictionary_threshold) = match name {
        "stanford40-action" => (stanford40_action(), 5),
        "stanford40-location" => (location("stanford40-location", 10), 5),
        "stanford40-mood" => (stanford40_mood(), 5),
        "ppmi-instrument-7" => (ppmi_instrument(7), 0),
        "ppmi-instrument-2" => (ppmi_instrument(2), 0),
        "ppmi-location" => (location("ppmi-location", 2), 0),
        "cifar10-object" => (object10("cifar10-object"), 0),
        "stl10-object" => (object10("stl10-object"), 0),
        "cifar100-object" => (cifar100_object(), 0),
        "facet-occupation" => (facet_occupation(false), 0),
        "facet-occupation-fair" => (facet_occupation(true), 0),
        "places-place" => (places_place(), 0),
        _ => return None,
    };
    let name = NAMES.iter().copied().find(|n| *n == name)?;
    Some(Preset {
        name,
        criterion,
        dictionary_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{render_step3, ClusterSet};

    #[test]
    fn all_presets_validate() {
        for name in preset_names() {
            let p = preset(name).unwrap();
            p.criterion.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(p.criterion.criterion_id, *name);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn stanford_action_step3_exact() {
        let p = preset("stanford40-action").unwrap();
        let mut tc = p.criterion;
        tc.k = 2;
        let clusters = ClusterSet::new(["waving", "clapping"]).unwrap();
        let expected = "Your job is to classify an action the person in an image is performing. Based on the image description, determine the most appropriate human action category that best classifies the main action in the image. You must choose from the following options: [\"waving\", \"clapping\"].\n\nGive your answer in the following format: \"Answer: {action}\". Be as specific as possible to choose the closest action from the given list. If a situation arises where nothing is allocated, please assign it to the action that has the closest resemblance.";
        assert_eq!(render_step3(&tc, &clusters).unwrap(), expected);
        assert_eq!(p.dictionary_threshold, 5);
    }

    #[test]
    fn ppmi_two_cluster_variant_adds_superclass_lines() {
        let k2 = preset("ppmi-instrument-2").unwrap().criterion;
        let k7 = preset("ppmi-instrument-7").unwrap().criterion;
        assert!(k2.step2b_template.contains("2. Merge clusters with similar meanings with a superclass."));
        assert!(!k7.step2b_template.contains("superclass"));
        assert_eq!(k2.step1_prompt, k7.step1_prompt);
    }

    #[test]
    fn fair_variant_differs_only_in_step3() {
        let base = preset("facet-occupation").unwrap().criterion;
        let fair = preset("facet-occupation-fair").unwrap().criterion;
        assert_eq!(base.step2b_template, fair.step2b_template);
        assert!(fair.step3_template.contains(FAIRNESS_SENTENCE));
        assert!(!base.step3_template.contains(FAIRNESS_SENTENCE));
    }
}
