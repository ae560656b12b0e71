//! Golden prompt checks: each builder reproduces its reference input byte
//! for byte, and the matching reference output parses.
use super::golden;
use labelstat::corpus::{AnnotatedSentence, Mention};
use labelstat::prompt::{
    build_icl_prompt, build_reflection_prompt, parse_entity_output, parse_reflection_output, BoundaryPayload,
    BoundaryStatus, BoundaryTokenPayload, ContextEvidence, FnCandidate, ParseOptions, ReflectionKind,
    ReflectionPayload, ReflectionUpdate, TaskDescription, UnseenCandidate,
};
use labelstat::retriever::SpanDemos;
use labelstat::stats::{SpanKind, SpanRecord, TokenCategoryCounts};

/// A sentence whose mentions are given by name, each matched left to right.
fn annotated(id: &str, text: &str, entities: &[(&str, &str)]) -> AnnotatedSentence {
    let tokens: Vec<String> = text.split(' ').map(String::from).collect();
    let mut cursor = 0;
    let mut mentions = Vec::new();
    for (name, etype) in entities {
        let parts: Vec<&str> = name.split(' ').collect();
        let start = (cursor..tokens.len())
            .find(|&i| tokens[i..].iter().take(parts.len()).map(String::as_str).eq(parts.iter().copied()))
            .unwrap_or_else(|| panic!("{name} not in {text}"));
        let end = start + parts.len() - 1;
        mentions.push(Mention::new(&tokens, start, end, *etype));
        cursor = end + 1;
    }
    AnnotatedSentence::new(id, tokens, mentions).unwrap()
}

fn sentence(text: &str) -> AnnotatedSentence {
    annotated("q", text, &[])
}

pub fn icl_prompt_matches_golden() {
    let demos = [
        annotated("d1", "The girl , who was accompanied to Philadelphia by her parents , will need more surgery later to correct the condition on her chest , back and legs , the hospital said .", &[("Philadelphia", "LOC")]),
        annotated("d2", "\" I know what I 'm here for , \" said Medvedev , who lost in the second round of the Open the last two years after reaching the quarters in 1993 , the same year he tried his hand as a restaurant critic .", &[("Medvedev", "PER"), ("Open", "MISC")]),
        annotated("d3", "The church in Australia said on Monday Lynch , Batchelor , Barton and Riel were held in a prison until the weekend , when they were moved to join the other captives at the compound .", &[("Australia", "LOC"), ("Lynch", "PER"), ("Batchelor", "PER"), ("Barton", "PER"), ("Riel", "LOC")]),
        annotated("d4", "In a telephone call to a local newspaper from his holiday home in Spain , Dalglish said : \" We came to the same opinion , albeit the club came to it a little bit earlier than me . \"", &[("Spain", "LOC"), ("Dalglish", "PER")]),
        annotated("d5", "Bosnian refugees in Hungary , the first to vote last weekend in their country 's first post-war election , found the rules confusing and some had no idea who they voted for , refugees and officials said on Wednesday .", &[("Bosnian", "MISC"), ("Hungary", "LOC")]),
        annotated("d6", "Glasgow Rangers striker Ally McCoist , another man in form after two hat-tricks in four days , was also named for the August 31 World Cup qualifier against Austria in Vienna .", &[("Glasgow Rangers", "ORG"), ("Ally McCoist", "PER"), ("World Cup", "MISC"), ("Austria", "LOC"), ("Vienna", "LOC")]),
        annotated("d7", "Austrian television said the coach , which was carrying 45 , was en route from the Czech Republic to Italy when the accident occurred near Steinberg , 200 km southwest of Vienna .", &[("Austrian", "MISC"), ("Czech Republic", "LOC"), ("Italy", "LOC"), ("Steinberg", "LOC"), ("Vienna", "LOC")]),
        annotated("d8", "Austrian television reported earlier that more than 20 had been hurt in the accident at the station in Linz , 300 km ( 180 miles ) west of Vienna .", &[("Austrian", "MISC"), ("Linz", "LOC"), ("Vienna", "LOC")]),
    ];
    let query = sentence("The fans , in Austria to watch their team play Rapid Vienna last Wednesday , may have been involved in a pub brawl earlier , the spokeswoman said .");
    let refs: Vec<&AnnotatedSentence> = demos.iter().collect();
    let prompt = build_icl_prompt(&TaskDescription::newswire(), &refs, &query);
    assert_eq!(prompt, golden("icl_input.txt"));

    let desc = TaskDescription::newswire();
    let parsed = parse_entity_output(&golden("icl_output.txt"), &ParseOptions::new(&desc.types)).unwrap();
    let got: Vec<(&str, &str)> = parsed.entities.iter().map(|e| (e.name.as_str(), e.etype.as_str())).collect();
    assert_eq!(got, vec![("Austria", "LOC"), ("Rapid Vienna", "ORG")]);
}

pub fn unseen_prompt_matches_golden() {
    let payload = ReflectionPayload::Unseen(vec![UnseenCandidate {
        token: "Bitar".into(),
        contexts: vec![ContextEvidence {
            token: "pulled".into(),
            examples: vec![SpanRecord::example(
                SpanKind::Entity,
                "10th-ranked American Chanda Rubin has pulled",
                Some(("Chanda Rubin", "PER")),
            )],
        }],
    }]);
    let query = sentence("Bitar pulled off fine saves whenever they did .");
    let desc = TaskDescription::newswire();
    assert_eq!(build_reflection_prompt(&desc, &query, &payload), golden("unseen_input.txt"));

    let update = parse_reflection_output(ReflectionKind::Unseen, &golden("unseen_output.txt"), &ParseOptions::new(&desc.types)).unwrap();
    match update {
        ReflectionUpdate::Entities { entities } => {
            assert_eq!(entities.len(), 1);
            assert_eq!((entities[0].name.as_str(), entities[0].etype.as_str()), ("Bitar", "PER"));
        }
        other => panic!("unexpected update {other:?}"),
    }
}

pub fn false_negative_prompt_matches_golden() {
    let payload = ReflectionPayload::FalseNegative(vec![FnCandidate {
        token: "Italian".into(),
        counts: TokenCategoryCounts {
            entity: 35,
            context: 0,
            other: 0,
        },
        demos: SpanDemos {
            positives: vec![SpanRecord::example(
                SpanKind::Entity,
                "Middlesbrough 's Italian striker Fabrizio",
                Some(("Italian", "MISC")),
            )],
            ..SpanDemos::default()
        },
    }]);
    let query = sentence(
        "Italian Serie A games to be played on Sunday ( league positions in parentheses , all kick- off times GMT ) :",
    );
    let desc = TaskDescription::newswire();
    assert_eq!(build_reflection_prompt(&desc, &query, &payload), golden("fn_input.txt"));

    let update = parse_reflection_output(ReflectionKind::FalseNegative, &golden("fn_output.txt"), &ParseOptions::new(&desc.types)).unwrap();
    assert!(matches!(update, ReflectionUpdate::Entities { entities } if entities.len() == 1 && entities[0].name == "Italian"));
}

pub fn boundary_prompt_matches_golden() {
    let payload = ReflectionPayload::Boundary(BoundaryPayload {
        name: "Wenchang city".into(),
        etype: "LOC".into(),
        tokens: vec![BoundaryTokenPayload {
            token: "city".into(),
            status: BoundaryStatus::Inside,
            counts: TokenCategoryCounts {
                entity: 0,
                context: 44,
                other: 20,
            },
            demos: SpanDemos {
                hard_negatives: vec![SpanRecord::example(
                    SpanKind::Context,
                    "in the English city of",
                    Some(("English", "MISC")),
                )],
                negatives: vec![SpanRecord::example(SpanKind::Other, "said the city council would", None)],
                ..SpanDemos::default()
            },
        }],
    });
    let query = sentence("Xinhua did not say when Qinglan port in Wenchang city would be opened to foreign vessels .");
    let desc = TaskDescription::newswire();
    assert_eq!(build_reflection_prompt(&desc, &query, &payload), golden("boundary_input.txt"));

    let update = parse_reflection_output(ReflectionKind::Boundary, &golden("boundary_output.txt"), &ParseOptions::new(&desc.types)).unwrap();
    match update {
        ReflectionUpdate::Replace { entity } => assert_eq!((entity.name.as_str(), entity.etype.as_str()), ("Wenchang", "LOC")),
        other => panic!("unexpected update {other:?}"),
    }
}
