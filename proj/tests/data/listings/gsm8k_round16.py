from typing import Literal
import workspace.GSM8K.workflows.template.operator as operator
import workspace.GSM8K.workflows.round_16.prompt as prompt_custom
from scripts.async_llm import create_llm_instance
import weave


DatasetType = Literal["HumanEval", "MBPP", "GSM8K", "MATH", "HotpotQA", "DROP"]

class Workflow:
    def __init__(
        self,
        name: str,
        llm_config,
        dataset: DatasetType,
    ) -> None:
        self.name = name
        self.dataset = dataset
        self.llm = create_llm_instance(llm_config)
        self.sc_ensemble = operator.ScEnsemble(self.llm)
        self.custom = operator.Custom(self.llm)
        self.programmer = operator.Programmer(self.llm)

    @weave.op()
    async def __call__(self, problem: str):
        """
        Implementation of the workflow
        Each operator is callable, you can call it directly.
        """
        # Step 1: Use the Custom operator to generate a detailed solution
        custom_response = await self.custom(input=problem, instruction=prompt_custom.SIMPLE_SOLVER_1, role="simple_solver_1")
        
        # Step 2: Use the Programmer operator to analyze the problem and provide a code solution
        programmer_response_1 = await self.programmer(problem=problem, analysis="Calculate step by step")
        
        # Step 3: Use the Programmer operator to generate a solution considering edge cases
        programmer_response_2 = await self.programmer(problem=problem, analysis="Generate solution with edge cases")
        
        # Step 4: Use the Programmer operator to execute code for precise calculations
        programmer_response_3 = await self.programmer(problem=problem, analysis="Execute code for precise calculations")
        
        # Step 5: Use the Programmer operator to verify and validate results
        programmer_response_4 = await self.programmer(problem=problem, analysis="Verify and validate results")
        
        # Step 6: Use the Programmer operator to explore alternative methods
        programmer_response_5 = await self.programmer(problem=problem, analysis="Explore alternative methods")
        
        # Step 7: Combine the responses from Custom and all Programmer responses for the ScEnsemble
        solutions = [
            custom_response['response'], 
            programmer_response_1['output'], 
            programmer_response_2['output'], 
            programmer_response_3['output'],
            programmer_response_4['output'],
            programmer_response_5['output']
        ]
        
        # Step 8: Use the ScEnsemble operator to select the best solution
        ensemble_response = await self.sc_ensemble(solutions=solutions, problem=problem)
        
        # Step 9: Refine and format the final output
        final_output = await self.programmer(problem=ensemble_response['response'], analysis="Refine and format final output")
        
        return final_output['output'], self.llm.get_usage_summary()["total_cost"]

