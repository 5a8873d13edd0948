fn main() {
    use pullherd_proto::{encode_frame, Message, TaskStatus};
    let frames = vec![
        ("SHUTDOWN", encode_frame(&Message::Shutdown).unwrap()),
        (
            "REQUEST",
            encode_frame(&Message::Request {
                worker_id: "w-0001".into(),
            })
            .unwrap(),
        ),
        (
            "ASSIGN",
            encode_frame(&Message::Assign {
                task_id: "d2dUHF-T00000".into(),
                calc_ids: vec!["d2dUHF-000000".into(), "d2dUHF-000001".into()],
                payload_ref: "task:d2dUHF-T00000".into(),
                cost_s: 12.5,
            })
            .unwrap(),
        ),
        (
            "RESULT",
            encode_frame(&Message::TaskResult {
                worker_id: "w-0001".into(),
                task_id: "d2dUHF-T00000".into(),
                status: TaskStatus::Ok,
                elapsed_s: 12.625,
                error: None,
            })
            .unwrap(),
        ),
        (
            "HEARTBEAT",
            encode_frame(&Message::Heartbeat {
                worker_id: "w-0001".into(),
                busy_task_ids: vec!["d2dUHF-T00000".into()],
            })
            .unwrap(),
        ),
        (
            "NOWORK",
            encode_frame(&Message::NoWork { retry_after_s: 1.0 }).unwrap(),
        ),
        ("DRAIN", encode_frame(&Message::Drain).unwrap()),
    ];
    for (name, f) in frames {
        let hex: String = f.iter().map(|b| format!("{b:02x}")).collect();
        let body = String::from_utf8_lossy(&f[4..]).to_string();
        println!("### {name}\nbody: {body}\nhex:  {hex}\n");
    }
}
