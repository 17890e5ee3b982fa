//! The built-in object set: 12 seen and 3 unseen templates spanning spheres,
//! boxes, capsules, cylinders, and watertight meshes.

use nalgebra::Vector3;

use crate::geom::{box_mesh, octahedron_mesh, GeometryKind, ObjectTemplate, TemplateError};

/// Clearance between the gripping hand joint and the object's top surface.
pub const GRIP_CLEARANCE: f64 = 0.015;

#[derive(Debug, Clone)]
pub struct ObjectRecipe {
    pub id: &'static str,
    pub kind_id: &'static str,
    pub unseen: bool,
}

fn kind_for(kind_id: &str) -> GeometryKind {
    match kind_id {
        "ball" => GeometryKind::Sphere { radius: 0.11 },
        "melon" => GeometryKind::Sphere { radius: 0.14 },
        "crate" => GeometryKind::Box { half_extents: [0.15, 0.12, 0.10] },
        "book" => GeometryKind::Box { half_extents: [0.11, 0.14, 0.025] },
        "brick" => GeometryKind::Box { half_extents: [0.10, 0.05, 0.06] },
        "bottle" => GeometryKind::Capsule { half_height: 0.12, radius: 0.045 },
        "roller" => GeometryKind::Capsule { half_height: 0.10, radius: 0.06 },
        "can" => GeometryKind::Cylinder { half_height: 0.06, radius: 0.045 },
        "bucket" => GeometryKind::Cylinder { half_height: 0.14, radius: 0.13 },
        "lamp" => GeometryKind::Cylinder { half_height: 0.17, radius: 0.05 },
        "stone" => {
            let (v, t) = octahedron_mesh(0.09, 0.11, 0.08);
            GeometryKind::Mesh { vertices: v, triangles: t, file: "stone.off".into() }
        }
        "toolbox" => {
            let (v, t) = box_mesh([0.16, 0.09, 0.07]);
            GeometryKind::Mesh { vertices: v, triangles: t, file: "toolbox.off".into() }
        }
        "gem" => {
            let (v, t) = octahedron_mesh(0.12, 0.09, 0.14);
            GeometryKind::Mesh { vertices: v, triangles: t, file: "gem.off".into() }
        }
        "jug" => GeometryKind::Capsule { half_height: 0.14, radius: 0.09 },
        "tray" => GeometryKind::Box { half_extents: [0.18, 0.13, 0.02] },
        other => panic!("unknown object recipe '{other}'"),
    }
}

/// All fifteen recipes; the final three are the unseen holdout objects.
pub fn object_recipes() -> Vec<ObjectRecipe> {
    let seen = [
        "ball", "melon", "crate", "book", "brick", "bottle", "roller", "can", "bucket", "lamp",
        "stone", "toolbox",
    ];
    let unseen = ["gem", "jug", "tray"];
    seen.iter()
        .map(|&id| ObjectRecipe { id, kind_id: id, unseen: false })
        .chain(unseen.iter().map(|&id| ObjectRecipe { id, kind_id: id, unseen: true }))
        .collect()
}

/// Instantiates one template. The grip offset points from the gripping hand
/// to the object centroid: a top grip, hand hovering `GRIP_CLEARANCE` above
/// the object's +z extent. Unseen objects follow the same rule, which is
/// what makes the grip relation learnable from geometry alone.
pub fn make_template(
    recipe: &ObjectRecipe,
    sample_count: usize,
    seed: u64,
) -> Result<ObjectTemplate, TemplateError> {
    let kind = kind_for(recipe.kind_id);
    let probe = ObjectTemplate::new(recipe.id, kind.clone(), sample_count, seed, Vector3::zeros())?;
    let grip = Vector3::new(0.0, 0.0, -(probe.top_extent() + GRIP_CLEARANCE));
    ObjectTemplate::new(recipe.id, kind, sample_count, seed, grip)
}

/// Builds the default 15-object set (count configurable for smaller corpora):
/// `(seen, unseen)` split with the last `unseen_count` recipes held out.
pub fn default_object_set(
    object_count: usize,
    unseen_count: usize,
    sample_count: usize,
    seed: u64,
) -> Result<(Vec<ObjectTemplate>, Vec<String>), TemplateError> {
    let recipes = object_recipes();
    assert!(object_count <= recipes.len(), "at most {} built-in objects", recipes.len());
    assert!(unseen_count < object_count);
    // Keep mesh coverage in both splits where counts allow.
    let chosen: Vec<ObjectRecipe> = recipes.into_iter().take(object_count).collect();
    let mut templates = Vec::with_capacity(object_count);
    let mut unseen_ids = Vec::new();
    for (i, r) in chosen.iter().enumerate() {
        let t = make_template(r, sample_count, crate::nn::derive_seed(seed, "object", i as u64))?;
        if i >= object_count - unseen_count {
            unseen_ids.push(t.object_id.clone());
        }
        templates.push(t);
    }
    Ok((templates, unseen_ids))
}
