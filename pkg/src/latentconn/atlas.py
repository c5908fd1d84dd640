"""AAL-90 cerebral region labels in standard atlas order (left/right interleaved)."""

ABBREVIATIONS = (
    "PreCG", "SFGdor", "ORBsup", "MFG", "ORBmid", "IFGoperc", "IFGtriang",
    "ORBinf", "ROL", "SMA", "OLF", "SFGmed", "ORBsupmed", "REC", "INS", "ACG",
    "DCG", "PCG", "HIP", "PHG", "AMYG", "CAL", "CUN", "LING", "SOG", "MOG",
    "IOG", "FFG", "PoCG", "SPG", "IPL", "SMG", "ANG", "PCUN", "PCL", "CAU",
    "PUT", "PAL", "THA", "HES", "STG", "TPOsup", "MTG", "TPOmid", "ITG",
)

FULL_NAMES = {
    "PreCG": "Precentral gyrus",
    "SFGdor": "Superior frontal gyrus, dorsolateral",
    "ORBsup": "Superior frontal gyrus, orbital part",
    "MFG": "Middle frontal gyrus",
    "ORBmid": "Middle frontal gyrus orbital part",
    "IFGoperc": "Inferior frontal gyrus, opercular part",
    "IFGtriang": "Inferior frontal gyrus, triangular part",
    "ORBinf": "Inferior frontal gyrus, orbital part",
    "ROL": "Rolandic operculum",
    "SMA": "Supplementary motor area",
    "OLF": "Olfactory cortex",
    "SFGmed": "Superior frontal gyrus, medial",
    "ORBsupmed": "Superior frontal gyrus, medial orbital",
    "REC": "Gyrus rectus",
    "INS": "Insula",
    "ACG": "Anterior cingulate and paracingulate gyri",
    "DCG": "Median cingulate and paracingulate gyri",
    "PCG": "Posterior cingulate gyrus",
    "HIP": "Hippocampus",
    "PHG": "Parahippocampal gyrus",
    "AMYG": "Amygdala",
    "CAL": "Calcarine fissure and surrounding cortex",
    "CUN": "Cuneus",
    "LING": "Lingual gyrus",
    "SOG": "Superior occipital gyrus",
    "MOG": "Middle occipital gyrus",
    "IOG": "Inferior occipital gyrus",
    "FFG": "Fusiform gyrus",
    "PoCG": "Postcentral gyrus",
    "SPG": "Superior parietal gyrus",
    "IPL": "Inferior parietal, but supramarginal and angular gyri",
    "SMG": "Supramarginal gyrus",
    "ANG": "Angular gyrus",
    "PCUN": "Precuneus",
    "PCL": "Paracentral lobule",
    "CAU": "Caudate nucleus",
    "PUT": "Lenticular nucleus, putamen",
    "PAL": "Lenticular nucleus, pallidum",
    "THA": "Thalamus",
    "HES": "Heschl gyrus",
    "STG": "Superior temporal gyrus",
    "TPOsup": "Temporal pole: superior temporal gyrus",
    "MTG": "Middle temporal gyrus",
    "TPOmid": "Temporal pole: middle temporal gyrus",
    "ITG": "Inferior temporal gyrus",
}

REGIONS = tuple(f"{abbr}.{side}" for abbr in ABBREVIATIONS for side in ("L", "R"))
N_REGIONS = len(REGIONS)
N_EDGES = N_REGIONS * (N_REGIONS - 1) // 2


def region_index(label):
    """Index of ``label`` (e.g. ``"SFGmed.L"``) in atlas order."""
    try:
        return REGIONS.index(label)
    except ValueError:
        raise KeyError(f"unknown region label {label!r}") from None


def regions_for(abbreviations, sides=("L", "R")):
    """Atlas indices for every listed abbreviation on the requested hemispheres."""
    return [region_index(f"{abbr}.{side}") for abbr in abbreviations for side in sides]
