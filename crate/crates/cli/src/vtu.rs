//! ASCII VTK unstructured-grid writer for tetrahedral meshes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use quadcurl::mesh::TetMesh;

const VTK_TETRA: u8 = 10;

/// Writes `mesh` with the given cell and point scalars. Field lengths must
/// match the tet and vertex counts.
pub fn export_vtu(
    mesh: &TetMesh,
    cell_fields: &[(&str, &[f64])],
    point_fields: &[(&str, &[f64])],
    path: &Path,
) -> io::Result<()> {
    for (name, values) in cell_fields {
        check_len(name, values.len(), mesh.num_tets(), "tets")?;
    }
    for (name, values) in point_fields {
        check_len(name, values.len(), mesh.num_vertices(), "vertices")?;
    }
    fs::write(path, render(mesh, cell_fields, point_fields))
}

fn check_len(name: &str, got: usize, want: usize, what: &str) -> io::Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("field {name} has {got} values, mesh has {want} {what}"),
        ))
    }
}

fn render(mesh: &TetMesh, cell_fields: &[(&str, &[f64])], point_fields: &[(&str, &[f64])]) -> String {
    let mut s = String::new();
    let nv = mesh.num_vertices();
    let nt = mesh.num_tets();
    s.push_str("<?xml version=\"1.0\"?>\n");
    s.push_str("<VTKFile type=\"UnstructuredGrid\" version=\"0.1\" byte_order=\"LittleEndian\">\n");
    s.push_str("  <UnstructuredGrid>\n");
    let _ = writeln!(s, "    <Piece NumberOfPoints=\"{nv}\" NumberOfCells=\"{nt}\">");

    data_section(&mut s, "PointData", point_fields);
    data_section(&mut s, "CellData", cell_fields);

    s.push_str("      <Points>\n");
    s.push_str("        <DataArray type=\"Float64\" NumberOfComponents=\"3\" format=\"ascii\">\n");
    for p in mesh.vertices() {
        let _ = writeln!(s, "          {} {} {}", p[0], p[1], p[2]);
    }
    s.push_str("        </DataArray>\n      </Points>\n");

    s.push_str("      <Cells>\n");
    s.push_str("        <DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n");
    for t in mesh.tets() {
        let _ = writeln!(s, "          {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    s.push_str("        </DataArray>\n");
    s.push_str("        <DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n");
    for k in 1..=nt {
        let _ = writeln!(s, "          {}", 4 * k);
    }
    s.push_str("        </DataArray>\n");
    s.push_str("        <DataArray type=\"UInt8\" Name=\"types\" format=\"ascii\">\n");
    for _ in 0..nt {
        let _ = writeln!(s, "          {VTK_TETRA}");
    }
    s.push_str("        </DataArray>\n      </Cells>\n");
    s.push_str("    </Piece>\n  </UnstructuredGrid>\n</VTKFile>\n");
    s
}

fn data_section(s: &mut String, tag: &str, fields: &[(&str, &[f64])]) {
    if fields.is_empty() {
        return;
    }
    let _ = writeln!(s, "      <{tag}>");
    for (name, values) in fields {
        let _ = writeln!(s, "        <DataArray type=\"Float64\" Name=\"{name}\" format=\"ascii\">");
        for v in values.iter() {
            let _ = writeln!(s, "          {v}");
        }
        s.push_str("        </DataArray>\n");
    }
    let _ = writeln!(s, "      </{tag}>");
}
