//! Deterministic SVG rendering of scenarios: road polylines styled by
//! kind, agent boxes colored by class, and trajectories as fading
//! polylines. Byte-identical output for identical inputs.

use crate::scenario::{AgentClass, RoadKind, Scenario, TrafficLightState};
use std::fmt::Write;

fn kind_style(kind: RoadKind) -> &'static str {
    match kind {
        RoadKind::LaneCenter => "stroke=\"#b8b8b8\" stroke-width=\"0.15\" stroke-dasharray=\"1.5 1.5\"",
        RoadKind::LaneBoundary => "stroke=\"#8a8a8a\" stroke-width=\"0.15\"",
        RoadKind::RoadBoundary => "stroke=\"#3c3c3c\" stroke-width=\"0.35\"",
        RoadKind::Crosswalk => "stroke=\"#d8d8d8\" stroke-width=\"0.8\" stroke-dasharray=\"0.6 0.6\"",
        RoadKind::SpeedBump => "stroke=\"#e0a040\" stroke-width=\"0.5\"",
        RoadKind::StopSign => "stroke=\"#c03030\" stroke-width=\"0.6\"",
    }
}

fn class_color(class: AgentClass) -> &'static str {
    match class {
        AgentClass::Vehicle => "#3a6fd8",
        AgentClass::Pedestrian => "#d85f3a",
        AgentClass::Cyclist => "#3aa05f",
    }
}

fn light_color(state: TrafficLightState) -> &'static str {
    match state {
        TrafficLightState::Red => "#d03030",
        TrafficLightState::Yellow => "#d0b030",
        TrafficLightState::Green => "#30b050",
        TrafficLightState::Unknown => "#909090",
    }
}

fn fmt_pt(x: f64, y: f64) -> String {
    // Scene y points up; SVG y points down.
    format!("{:.3},{:.3}", x, -y)
}

/// Render a scenario to an SVG document string.
pub fn render_svg(scenario: &Scenario) -> String {
    let half = scenario.context.fov_extent / 2.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.3} {:.3} {:.3} {:.3}\">",
        -half,
        -half,
        scenario.context.fov_extent,
        scenario.context.fov_extent
    );
    let _ = writeln!(svg, "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{0:.3}\" height=\"{0:.3}\" fill=\"#f6f6f4\"/>",
        -half, scenario.context.fov_extent);

    let _ = writeln!(svg, "<g id=\"roads\" fill=\"none\">");
    for pl in &scenario.context.polylines {
        let pts: Vec<String> = pl.points.iter().map(|p| fmt_pt(p.x, p.y)).collect();
        let _ = writeln!(svg, "<polyline points=\"{}\" {}/>", pts.join(" "), kind_style(pl.kind));
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, "<g id=\"traffic-lights\">");
    for tl in &scenario.context.traffic_lights {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"0.8\" fill=\"{}\"/>",
            tl.position.x,
            -tl.position.y,
            light_color(tl.state)
        );
    }
    let _ = writeln!(svg, "</g>");

    for (i, agent) in scenario.agents.iter().enumerate() {
        let color = class_color(agent.initial.class);
        let _ = writeln!(svg, "<g id=\"agent-{i}\" class=\"agent\">");
        // Trajectory first so the box draws on top; opacity fades with time.
        let t_len = agent.future.len();
        if t_len > 1 {
            let seq = agent.pose_sequence();
            for (t, w) in seq.windows(2).enumerate() {
                let opacity = 0.75 * (1.0 - t as f64 / t_len as f64) + 0.08;
                let _ = writeln!(
                    svg,
                    "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"{}\" stroke-width=\"0.3\" opacity=\"{:.3}\"/>",
                    w[0].x, -w[0].y, w[1].x, -w[1].y, color, opacity
                );
            }
        }
        let corners = agent.obb_at(0).corners();
        let pts: Vec<String> = corners.iter().map(|c| fmt_pt(c.x, c.y)).collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.85\" stroke=\"#202020\" stroke-width=\"0.1\"/>",
            pts.join(" "),
            color
        );
        // Heading tick from the center to the front edge.
        let front = agent.initial.position()
            + crate::geom::Vec2::new(agent.initial.heading.cos(), agent.initial.heading.sin())
                .scaled(agent.initial.length / 2.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"#ffffff\" stroke-width=\"0.18\"/>",
            agent.initial.x, -agent.initial.y, front.x, -front.y
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}
