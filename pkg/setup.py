import os
import sys
from setuptools import setup, find_packages

os.chdir(os.path.dirname(os.path.realpath(__file__)))

OS_WINDOWS = os.name == "nt"


def get_requirements():
    """
    To update the requirements for lifemap, edit the requirements.txt file.
    """
    with open("requirements.txt", "r") as f:
        req_lines = f.readlines()
    reqs = []
    for line in req_lines:
        # Avoid adding comments.
        line = line.split("#")[0].strip()
        if line:
            reqs.append(line)
    return reqs


def get_scripts():
    """
    Determine which executable scripts should be added. For Windows,
    this means creating a .bat file.
    """
    if OS_WINDOWS:
        batpath = os.path.join("bin", "windows", "lifemap.bat")
        scriptpath = os.path.join(sys.prefix, "Scripts", "lifemap.py")
        with open(batpath, "w") as batfile:
            batfile.write('@"%s" "%s" %%*' % (sys.executable, scriptpath))
        return [batpath, os.path.join("bin", "windows", "lifemap.py")]
    else:
        return [os.path.join("bin", "unix", "lifemap")]


def package_data():
    """
    By default, the distribution tools ignore all non-python files.

    Make sure we get the packaged config defaults.
    """
    file_set = []
    for root, dirs, files in os.walk("lifemap"):
        for f in files:
            if f.endswith((".py", ".pyc")):
                continue
            file_name = os.path.relpath(os.path.join(root, f), "lifemap")
            file_set.append(file_name)
    return file_set


# setup the package
setup(
    name="lifemap",
    version="0.1",
    author="VolundMush",
    maintainer="VolundMush",
    description="Lifelong 3D LiDAR map maintenance: dynamic point removal, multi-session alignment, change detection and map version control.",
    license="MIT",
    packages=find_packages(exclude=["tests", "tests.*"]),
    scripts=get_scripts(),
    install_requires=get_requirements(),
    extras_require={"test": ["pytest"]},
    package_data={"lifemap": package_data()},
    zip_safe=False,
    classifiers=[
        "Programming Language :: Python :: 3 :: Only",
        "Environment :: Console",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "Operating System :: MacOS",
        "Operating System :: Microsoft :: Windows",
        "Operating System :: POSIX :: Linux",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: GIS",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    python_requires=">=3.10",
)
